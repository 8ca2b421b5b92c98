#include "hpim/moments.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

#include "hpim/error.hpp"
#include "hpim/io.hpp"

namespace hpim::moments {

IdentityMoments identity_moments(const IdentityCodeSet& codes, std::size_t order) {
  if (order < 1 || order > kMaxOrder) {
    throw ValidationError("moment order L must be in [1, " + std::to_string(kMaxOrder) +
                          "] (got " + std::to_string(order) + ")");
  }
  if (codes.codes.empty()) {
    throw ValidationError("identity " + codes.identity_id + " has no codes");
  }
  const std::size_t dim = codes.codes.front().code.size();
  const auto n = static_cast<double>(codes.codes.size());

  IdentityMoments m;
  m.identity_id = codes.identity_id;
  m.n = codes.codes.size();
  m.mean.assign(dim, 0.0);
  for (const auto& c : codes.codes) {
    if (c.code.size() != dim) {
      throw ValidationError("identity " + codes.identity_id + ": image " + c.image_id +
                            " has code dimension " + std::to_string(c.code.size()) +
                            ", expected " + std::to_string(dim));
    }
    for (std::size_t d = 0; d < dim; ++d) m.mean[d] += c.code[d];
  }
  for (double& x : m.mean) x /= n;

  m.central.assign(order - 1, std::vector<double>(dim, 0.0));
  if (m.n == 1) return m;
  for (const auto& c : codes.codes) {
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = c.code[d] - m.mean[d];
      double power = diff;
      for (std::size_t l = 2; l <= order; ++l) {
        power *= diff;
        m.central[l - 2][d] += power;
      }
    }
  }
  for (auto& v : m.central) {
    for (double& x : v) x /= n;
  }
  return m;
}

namespace {

double l2_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

double cmd(const IdentityMoments& a, const IdentityMoments& b) {
  if (a.dim() != b.dim()) {
    throw ValidationError("cmd: dimension mismatch between " + a.identity_id + " and " +
                          b.identity_id);
  }
  if (a.order() != b.order()) {
    throw ValidationError("cmd: order mismatch between " + a.identity_id + " and " +
                          b.identity_id);
  }
  double total = l2_distance(a.mean, b.mean);
  for (std::size_t l = 0; l < a.central.size(); ++l) {
    total += l2_distance(a.central[l], b.central[l]);
  }
  return total;
}

CmdMatrix cmd_matrix(std::span<const IdentityMoments> moments, unsigned threads) {
  const std::size_t n = moments.size();
  if (n < 2) throw ValidationError("cmd matrix needs at least 2 identities");
  for (const auto& m : moments) {
    if (m.dim() != moments.front().dim() || m.order() != moments.front().order()) {
      throw ValidationError("identity " + m.identity_id +
                            " has inconsistent code dimension or order");
    }
  }
  CmdMatrix out;
  out.order = moments.front().order();
  for (const auto& m : moments) out.ids.push_back(m.identity_id);
  out.values = Matrix(n, n, 0.0);

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  auto work = [&](unsigned worker) {
    // Rows are dealt round-robin so the triangular workload is balanced.
    for (std::size_t a = worker; a < n; a += threads) {
      for (std::size_t b = a + 1; b < n; ++b) {
        const double v = cmd(moments[a], moments[b]);
        out.values(a, b) = v;
        out.values(b, a) = v;
      }
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t);
  }
  return out;
}

CmdMatrix cmd_matrix(std::span<const IdentityCodeSet> sets, std::size_t order,
                     unsigned threads) {
  std::vector<IdentityMoments> moments;
  moments.reserve(sets.size());
  for (const auto& s : sets) moments.push_back(identity_moments(s, order));
  return cmd_matrix(moments, threads);
}

std::string cache_to_text(const CmdMatrix& m, std::size_t dim, const std::string& hash) {
  std::string out = "hpim-cmd-cache 1\n";
  out += std::to_string(m.size()) + " " + std::to_string(m.order) + " " + std::to_string(dim) +
         " " + hash + "\n";
  for (const auto& id : m.ids) out += id + "\n";
  for (std::size_t r = 0; r < m.size(); ++r) {
    for (std::size_t c = 0; c < m.size(); ++c) {
      if (c) out += ' ';
      out += io::format_double(m.values(r, c));
    }
    out += '\n';
  }
  return out;
}

CmdMatrix cache_from_text(const std::string& text, CacheHeader* header) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto next_line = [&](const char* what) {
    if (!std::getline(in, line)) {
      throw ParseError("cmd cache: unexpected end of file reading " + std::string(what));
    }
    ++lineno;
  };
  next_line("magic");
  if (line != "hpim-cmd-cache 1") throw ParseError("cmd cache: bad magic line");
  next_line("header");
  CacheHeader h;
  {
    std::istringstream hs(line);
    if (!(hs >> h.n >> h.order >> h.dim >> h.hash)) {
      throw ParseError("cmd cache line 2: malformed header");
    }
  }
  CmdMatrix m;
  m.order = h.order;
  for (std::size_t i = 0; i < h.n; ++i) {
    next_line("identity id");
    m.ids.push_back(line);
  }
  m.values = Matrix(h.n, h.n);
  for (std::size_t r = 0; r < h.n; ++r) {
    next_line("matrix row");
    std::istringstream rs(line);
    std::string tok;
    for (std::size_t c = 0; c < h.n; ++c) {
      if (!(rs >> tok)) {
        throw ParseError("cmd cache line " + std::to_string(lineno) + ": short row");
      }
      m.values(r, c) = io::parse_double(tok);
    }
  }
  if (header) *header = h;
  return m;
}

std::string to_csv(const CmdMatrix& m) {
  std::string out = "id";
  for (const auto& id : m.ids) out += "," + id;
  out += '\n';
  for (std::size_t r = 0; r < m.size(); ++r) {
    out += m.ids[r];
    for (std::size_t c = 0; c < m.size(); ++c) out += "," + io::format_double(m.values(r, c));
    out += '\n';
  }
  return out;
}

namespace {

/// Exclusive flock held for the lifetime of the object.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir) {
    const auto path = dir / ".lock";
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) throw Error("cannot open lock file " + path.string());
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      throw Error("cannot lock " + path.string());
    }
  }
  ~DirectoryLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  int fd_ = -1;
};

}  // namespace

MatrixCache::MatrixCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::filesystem::path MatrixCache::path_for(const std::string& hash, std::size_t order) const {
  return dir_ / ("cmd_" + hash + "_L" + std::to_string(order) + ".txt");
}

std::optional<CmdMatrix> MatrixCache::load(const std::string& hash, std::size_t order,
                                           std::size_t dim) const {
  const auto path = path_for(hash, order);
  if (!std::filesystem::exists(path)) return std::nullopt;
  try {
    CacheHeader h;
    auto m = cache_from_text(io::read_file(path), &h);
    if (h.hash != hash || h.order != order || h.dim != dim) return std::nullopt;
    return m;
  } catch (const ParseError&) {
    return std::nullopt;
  }
}

void MatrixCache::store(const CmdMatrix& m, std::size_t dim, const std::string& hash) const {
  std::filesystem::create_directories(dir_);
  DirectoryLock lock(dir_);
  io::write_file(path_for(hash, m.order), cache_to_text(m, dim, hash));
}

}  // namespace hpim::moments
