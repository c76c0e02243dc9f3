#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "tprm/tensor.hpp"

namespace tprm {

// TPRM tensor file: magic "TPRM", u8 version = 1, u8 order D, D little-endian
// u64 dims, then prod(dims) little-endian IEEE f64 values in last-index-fastest
// order.

namespace detail {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms unsupported");

inline void put_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void write_f64_le(std::ostream& os, const double* data, Index n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data), n * 8);
  } else {
    for (Index i = 0; i < n; ++i) put_u64_le(os, std::bit_cast<std::uint64_t>(data[i]));
  }
}

inline void read_f64_le(std::istream& is, double* data, Index n) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(data), n * 8);
  } else {
    for (Index i = 0; i < n; ++i) data[i] = std::bit_cast<double>(get_u64_le(is));
  }
}

}  // namespace detail

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open " + path.string() + " for writing");
  const char magic[4] = {'T', 'P', 'R', 'M'};
  os.write(magic, 4);
  os.put(static_cast<char>(1));  // version
  os.put(static_cast<char>(t.order()));
  for (Index d : t.dims()) detail::put_u64_le(os, static_cast<std::uint64_t>(d));
  detail::write_f64_le(os, t.data().data(), t.size());
  if (!os) throw InputError("write failed: " + path.string());
}

inline Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path.string());
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "TPRM", 4) != 0)
    throw InputError(path.string() + ": not a TPRM tensor file");
  const int version = is.get();
  if (version != 1) throw InputError(path.string() + ": unsupported version");
  const int order = is.get();
  if (order < 1 || order > 16) throw InputError(path.string() + ": bad tensor order");
  Dims dims(order);
  for (int d = 0; d < order; ++d) {
    dims[d] = static_cast<Index>(detail::get_u64_le(is));
    if (!is || dims[d] < 1 || dims[d] > (Index(1) << 32))
      throw InputError(path.string() + ": bad dimension");
  }
  VectorXd buf(dims_product(dims));
  detail::read_f64_le(is, buf.data(), buf.size());
  if (!is) throw InputError(path.string() + ": truncated tensor data");
  try {
    return Tensor(std::move(dims), std::move(buf));
  } catch (const std::invalid_argument& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

// Minimal RFC 4180 CSV: quoted fields with embedded commas/quotes/newlines,
// CRLF record separators on output, header row always present.

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path) : os_(path, std::ios::binary) {
    if (!os_) throw InputError("cannot open " + path.string() + " for writing");
  }
  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) os_.put(',');
      os_ << csv_escape(fields[i]);
    }
    os_ << "\r\n";
  }
  void close() { os_.close(); }

 private:
  std::ofstream os_;
};

inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
    } else {
      field += c;
    }
  }
  if (!field.empty() || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Response file: header row then one 0/1 value per record (first column).
inline VectorXi read_response_csv(const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  if (rows.size() < 2) throw InputError(path.string() + ": expected a header and data rows");
  VectorXi y(static_cast<Index>(rows.size() - 1));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].empty()) throw InputError(path.string() + ": empty record");
    try {
      const double v = std::stod(rows[i][0]);
      if (v != 0.0 && v != 1.0) throw InputError(path.string() + ": response must be 0/1");
      y[static_cast<Index>(i - 1)] = static_cast<int>(v);
    } catch (const std::invalid_argument&) {
      throw InputError(path.string() + ": non-numeric response value");
    }
  }
  return y;
}

/// Covariate file: header row then numeric records, one row per subject.
inline MatrixXd read_covariates_csv(const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  if (rows.size() < 2) throw InputError(path.string() + ": expected a header and data rows");
  const std::size_t q = rows[0].size();
  MatrixXd z(static_cast<Index>(rows.size() - 1), static_cast<Index>(q));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != q) throw InputError(path.string() + ": ragged record");
    for (std::size_t j = 0; j < q; ++j) {
      try {
        z(static_cast<Index>(i - 1), static_cast<Index>(j)) = std::stod(rows[i][j]);
      } catch (const std::invalid_argument&) {
        throw InputError(path.string() + ": non-numeric covariate value");
      }
    }
  }
  if (!z.allFinite()) throw InputError(path.string() + ": covariates must be finite");
  return z;
}

}  // namespace tprm
