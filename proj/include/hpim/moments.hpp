#ifndef HPIM_MOMENTS_HPP_
#define HPIM_MOMENTS_HPP_

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hpim/matrix.hpp"
#include "hpim/schema.hpp"

namespace hpim::moments {

inline constexpr std::size_t kDefaultOrder = 5;
inline constexpr std::size_t kMaxOrder = 8;

/// Mean and elementwise central moments of one identity's codes.
///
/// central[l - 2] holds (1/n) * sum_i (c_i - mean)^l for l = 2..order.
/// The zeroth moment (total mass) is always one and is not stored.
struct IdentityMoments {
  std::string identity_id;
  std::size_t n = 0;
  std::vector<double> mean;
  std::vector<std::vector<double>> central;

  std::size_t order() const { return central.size() + 1; }
  std::size_t dim() const { return mean.size(); }
};

/// Two-pass computation: mean first, then centered powers.
/// Throws ValidationError for an empty set or order outside [1, kMaxOrder].
IdentityMoments identity_moments(const IdentityCodeSet& codes, std::size_t order);

/// L-order empirical central moment discrepancy:
///   ||mean_a - mean_b||_2 + sum_{l=2..L} ||central_l(a) - central_l(b)||_2.
double cmd(const IdentityMoments& a, const IdentityMoments& b);

/// Symmetric pairwise discrepancies with a zero diagonal.
struct CmdMatrix {
  std::vector<std::string> ids;
  Matrix values;
  std::size_t order = kDefaultOrder;

  std::size_t size() const { return ids.size(); }
};

/// Fills all N(N-1)/2 pairs; rows are split across `threads` workers
/// (0 = hardware concurrency). Each pair is written by exactly one worker,
/// so results do not depend on the schedule.
CmdMatrix cmd_matrix(std::span<const IdentityMoments> moments, unsigned threads = 0);
CmdMatrix cmd_matrix(std::span<const IdentityCodeSet> sets, std::size_t order,
                     unsigned threads = 0);

/// Cache file contents: header (N, L, D, content hash), the id list, then
/// row-major values with 17 significant digits.
std::string cache_to_text(const CmdMatrix& m, std::size_t dim, const std::string& hash);

struct CacheHeader {
  std::size_t n = 0;
  std::size_t order = 0;
  std::size_t dim = 0;
  std::string hash;
};

/// Throws ParseError on a malformed cache.
CmdMatrix cache_from_text(const std::string& text, CacheHeader* header = nullptr);

/// Human-readable export with an id header row.
std::string to_csv(const CmdMatrix& m);

/// On-disk store of CMD matrices keyed by (content hash, order).
/// Writes hold an advisory lock on <dir>/.lock.
class MatrixCache {
 public:
  explicit MatrixCache(std::filesystem::path dir);

  std::filesystem::path path_for(const std::string& hash, std::size_t order) const;

  /// Returns the cached matrix if present and its header matches.
  std::optional<CmdMatrix> load(const std::string& hash, std::size_t order,
                                std::size_t dim) const;
  void store(const CmdMatrix& m, std::size_t dim, const std::string& hash) const;

 private:
  std::filesystem::path dir_;
};

}  // namespace hpim::moments

#endif  // HPIM_MOMENTS_HPP_
