#include "hpim/spl.hpp"

#include <algorithm>
#include <cmath>

#include "hpim/error.hpp"
#include "hpim/io.hpp"

namespace hpim::spl {

std::size_t WeightMatrix::selected(std::size_t group) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < samples; ++i) n += v[i * groups + group];
  return n;
}

bool WeightMatrix::all_selected() const {
  return std::all_of(v.begin(), v.end(), [](unsigned char x) { return x == 1; });
}

SplState make_state(std::vector<double> lambdas, double growth_factor) {
  if (!(growth_factor > 1.0)) {
    throw ValidationError("spl growth factor must be > 1 (got " +
                          io::format_double(growth_factor) + ")");
  }
  for (double l : lambdas) {
    if (!(l >= 0.0)) throw ValidationError("spl threshold must be >= 0");
  }
  return SplState{std::move(lambdas), growth_factor, 0};
}

WeightMatrix assign_weights(const Matrix& losses, const SplState& state) {
  if (losses.cols() != state.lambdas.size()) {
    throw ValidationError("loss matrix has " + std::to_string(losses.cols()) +
                          " groups, schedule has " + std::to_string(state.lambdas.size()));
  }
  WeightMatrix w{losses.rows(), losses.cols(), std::vector<unsigned char>(losses.data().size())};
  for (std::size_t i = 0; i < losses.rows(); ++i) {
    for (std::size_t j = 0; j < losses.cols(); ++j) {
      const double l = losses(i, j);
      if (std::isnan(l) || l < 0.0) {
        throw ValidationError("invalid loss " + io::format_double(l) + " at sample " +
                              std::to_string(i) + ", group " + std::to_string(j));
      }
      w.v[i * w.groups + j] = l < state.lambdas[j] ? 1 : 0;
    }
  }
  return w;
}

SplState init_lambdas(const Matrix& losses, double growth_factor) {
  if (losses.rows() == 0 || losses.cols() == 0) throw ValidationError("empty loss matrix");
  SplState state = make_state({}, growth_factor);
  std::vector<double> column(losses.rows());
  for (std::size_t j = 0; j < losses.cols(); ++j) {
    for (std::size_t i = 0; i < losses.rows(); ++i) column[i] = losses(i, j);
    const auto mid = column.begin() + static_cast<std::ptrdiff_t>((column.size() - 1) / 2);
    std::nth_element(column.begin(), mid, column.end());
    state.lambdas.push_back(*mid);
  }
  return state;
}

SplState advance(const SplState& state) {
  SplState next = state;
  for (double& l : next.lambdas) l *= state.growth_factor;
  ++next.epoch;
  return next;
}

std::string schedule_to_csv(const std::vector<ScheduleRecord>& records) {
  std::string out = "epoch,group,lambda,selected,total\n";
  for (const auto& r : records) {
    out += std::to_string(r.epoch) + "," + std::to_string(r.group) + "," +
           io::format_double(r.lambda) + "," + std::to_string(r.selected) + "," +
           std::to_string(r.total) + "\n";
  }
  return out;
}

}  // namespace hpim::spl
