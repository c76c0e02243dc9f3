#pragma once

#include <map>

#include <json.hpp>

#include "tprm/io.hpp"

namespace tprm {

/// Post burn-in, thinned MCMC draws keyed by parameter name, with shape
/// metadata and posterior summaries. Persists as one raw little-endian f64
/// stream per parameter plus a JSON manifest; matrices are flattened
/// column-major per draw.
class ChainStore {
 public:
  struct Series {
    Dims shape;                 // per-draw shape ({} treated as scalar)
    std::vector<double> draws;  // concatenated flattened draws
  };

  void register_series(const std::string& name, Dims shape) {
    if (series_.count(name)) throw std::invalid_argument("chain: duplicate series " + name);
    series_[name] = Series{std::move(shape), {}};
  }

  bool has(const std::string& name) const { return series_.count(name) != 0; }

  void append(const std::string& name, const double* flat, Index len) {
    Series& s = at(name);
    if (len != dims_product(s.shape))
      throw std::invalid_argument("chain: append size mismatch for " + name);
    s.draws.insert(s.draws.end(), flat, flat + len);
  }
  void append_scalar(const std::string& name, double v) { append(name, &v, 1); }
  void append_vector(const std::string& name, const VectorXd& v) {
    append(name, v.data(), v.size());
  }
  void append_matrix(const std::string& name, const MatrixXd& m) {
    append(name, m.data(), m.size());
  }

  Index flat_size(const std::string& name) const { return dims_product(at(name).shape); }
  const Dims& shape(const std::string& name) const { return at(name).shape; }
  Index draw_count(const std::string& name) const {
    const Series& s = at(name);
    return static_cast<Index>(s.draws.size()) / dims_product(s.shape);
  }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : series_) out.push_back(k);
    return out;
  }

  /// Draws as a (draw count) x (flat size) matrix.
  MatrixXd matrix(const std::string& name) const {
    const Series& s = at(name);
    const Index cols = dims_product(s.shape);
    const Index rows = static_cast<Index>(s.draws.size()) / cols;
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>>(s.draws.data(), rows, cols);
  }

  VectorXd mean(const std::string& name) const {
    const MatrixXd m = matrix(name);
    if (m.rows() == 0) throw std::invalid_argument("chain: no draws in " + name);
    return m.colwise().mean();
  }

  /// Equal-tailed credible interval per component (type-7 quantiles).
  std::pair<VectorXd, VectorXd> interval(const std::string& name, double level = 0.95) const {
    const MatrixXd m = matrix(name);
    if (m.rows() == 0) throw std::invalid_argument("chain: no draws in " + name);
    const double lo_p = (1.0 - level) / 2.0, hi_p = 1.0 - lo_p;
    VectorXd lo(m.cols()), hi(m.cols());
    std::vector<double> col(m.rows());
    for (Index j = 0; j < m.cols(); ++j) {
      for (Index i = 0; i < m.rows(); ++i) col[i] = m(i, j);
      std::sort(col.begin(), col.end());
      lo[j] = quantile_sorted(col, lo_p);
      hi[j] = quantile_sorted(col, hi_p);
    }
    return {lo, hi};
  }

  nlohmann::json meta;

  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["format"] = "tprm-chain";
    manifest["version"] = 1;
    manifest["meta"] = meta;
    for (const auto& [name, s] : series_) {
      const Index cols = dims_product(s.shape);
      manifest["series"][name] = {
          {"shape", s.shape}, {"draws", static_cast<Index>(s.draws.size()) / cols}};
      std::ofstream os(dir / (name + ".f64"), std::ios::binary);
      if (!os) throw InputError("chain save: cannot write " + name);
      detail::write_f64_le(os, s.draws.data(), static_cast<Index>(s.draws.size()));
      if (!os) throw InputError("chain save: write failed for " + name);
    }
    // Manifest last and atomically: its presence marks a complete store.
    const auto tmp = dir / "manifest.json.tmp";
    {
      std::ofstream os(tmp, std::ios::binary);
      if (!os) throw InputError("chain save: cannot write manifest");
      os << manifest.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, dir / "manifest.json");
  }

  static ChainStore load(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json", std::ios::binary);
    if (!is) throw InputError("chain load: no manifest in " + dir.string());
    nlohmann::json manifest;
    try {
      is >> manifest;
    } catch (const nlohmann::json::exception& e) {
      throw InputError("chain load: bad manifest: " + std::string(e.what()));
    }
    ChainStore chain;
    chain.meta = manifest.value("meta", nlohmann::json::object());
    if (!manifest.contains("series")) return chain;
    for (const auto& [name, info] : manifest["series"].items()) {
      Series s;
      s.shape = info["shape"].get<Dims>();
      const Index draws = info["draws"].get<Index>();
      const Index total = draws * dims_product(s.shape);
      s.draws.resize(static_cast<std::size_t>(total));
      std::ifstream fs(dir / (name + ".f64"), std::ios::binary);
      if (!fs) throw InputError("chain load: missing series " + name);
      detail::read_f64_le(fs, s.draws.data(), total);
      if (!fs) throw InputError("chain load: truncated series " + name);
      chain.series_[name] = std::move(s);
    }
    return chain;
  }

 private:
  static double quantile_sorted(const std::vector<double>& sorted, double p) {
    const double h = p * (static_cast<double>(sorted.size()) - 1.0);
    const auto lo = static_cast<std::size_t>(h);
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
  }

  Series& at(const std::string& name) {
    auto it = series_.find(name);
    if (it == series_.end()) throw std::invalid_argument("chain: unknown series " + name);
    return it->second;
  }
  const Series& at(const std::string& name) const {
    auto it = series_.find(name);
    if (it == series_.end()) throw std::invalid_argument("chain: unknown series " + name);
    return it->second;
  }

  std::map<std::string, Series> series_;
};

}  // namespace tprm
