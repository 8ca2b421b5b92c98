#ifndef HPIM_SPL_HPP_
#define HPIM_SPL_HPP_

#include <cstddef>
#include <string>
#include <vector>

#include "hpim/matrix.hpp"

namespace hpim::spl {

/// Per-group admission thresholds of the self-paced schedule.
struct SplState {
  std::vector<double> lambdas;
  double growth_factor = 1.3;
  std::size_t epoch = 0;
};

/// Builds a schedule from explicit thresholds. Rejects negative thresholds
/// and growth factors <= 1.
SplState make_state(std::vector<double> lambdas, double growth_factor = 1.3);

/// Binary samples x groups matrix; 1 admits the sample for that group.
struct WeightMatrix {
  std::size_t samples = 0;
  std::size_t groups = 0;
  std::vector<unsigned char> v;

  unsigned char operator()(std::size_t i, std::size_t j) const { return v[i * groups + j]; }
  std::size_t selected(std::size_t group) const;
  bool all_selected() const;
};

inline constexpr double kDefaultGrowth = 1.3;

/// v[i][j] = 1 iff losses(i, j) < lambdas[j]. Throws ValidationError on a
/// negative or NaN loss, naming the sample.
WeightMatrix assign_weights(const Matrix& losses, const SplState& state);

/// Starts each group's threshold at the lower median of its losses.
SplState init_lambdas(const Matrix& losses, double growth_factor = kDefaultGrowth);

/// Multiplies every threshold by the growth factor.
SplState advance(const SplState& state);

/// One row of the schedule log.
struct ScheduleRecord {
  std::size_t epoch;
  std::size_t group;
  double lambda;
  std::size_t selected;
  std::size_t total;
};

/// CSV with header epoch,group,lambda,selected,total.
std::string schedule_to_csv(const std::vector<ScheduleRecord>& records);

}  // namespace hpim::spl

#endif  // HPIM_SPL_HPP_
