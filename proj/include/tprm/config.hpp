#pragma once

#include <array>
#include <chrono>
#include <iomanip>

#include "tprm/pipeline.hpp"

namespace tprm {

// ---------------------------------------------------------------------------
// Flat key = value configuration with [section] headers; '#' or ';' comments.
// Sections: [model], [sampler], [prior]. Unknown keys fail loudly.

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline Dims parse_dims(const std::string& s) {
  Dims out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      const std::string t = trim(cur);
      if (!t.empty()) out.push_back(std::stoll(t));
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

inline bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw InputError("config: bad boolean for " + key + ": " + s);
}

}  // namespace detail

/// Applies one section.key = value setting onto the config.
inline void apply_config_entry(PipelineConfig& cfg, const std::string& section,
                               const std::string& key, const std::string& value) {
  const std::string k = section.empty() ? key : section + "." + key;
  try {
    if (k == "model.blocks") cfg.block_dims = detail::parse_dims(value);
    else if (k == "model.rank") cfg.rank = std::stoll(value);
    else if (k == "model.factor_model") cfg.factor_model = detail::parse_bool(value, k);
    else if (k == "model.factor_rank") cfg.factor_rank = std::stoll(value);
    else if (k == "model.screening") cfg.screening = detail::parse_bool(value, k);
    else if (k == "model.screen_tol") cfg.screen_tol = std::stod(value);
    else if (k == "model.pad_blocks") cfg.pad_blocks = detail::parse_bool(value, k);
    else if (k == "sampler.iters") cfg.iters = std::stoll(value);
    else if (k == "sampler.burn_in") cfg.burn_in = std::stoll(value);
    else if (k == "sampler.thin") cfg.thin = std::stoll(value);
    else if (k == "sampler.seed") cfg.seed = std::stoull(value);
    else if (k == "prior.nu0_tau") cfg.cp.nu0_tau = std::stod(value);
    else if (k == "prior.nu1_tau") cfg.cp.nu1_tau = std::stod(value);
    else if (k == "prior.kappa") cfg.cp.kappa = std::stod(value);
    else if (k == "prior.beta0_tau_psi") cfg.factor.beta0_tau_psi = std::stod(value);
    else if (k == "prior.beta1_tau_psi") cfg.factor.beta1_tau_psi = std::stod(value);
    else if (k == "prior.slab_var") cfg.select.slab_var = std::stod(value);
    else if (k == "prior.spike_var") cfg.select.spike_var = std::stod(value);
    else if (k == "prior.alpha0_pi") cfg.select.alpha0_pi = std::stod(value);
    else if (k == "prior.alpha1_pi") cfg.select.alpha1_pi = std::stod(value);
    else if (k == "prior.nu0_upsilon") cfg.select.nu0_upsilon = std::stod(value);
    else if (k == "prior.nu1_upsilon") cfg.select.nu1_upsilon = std::stod(value);
    else throw InputError("config: unknown key " + k);
  } catch (const std::invalid_argument&) {
    throw InputError("config: bad value for " + k + ": " + value);
  } catch (const std::out_of_range&) {
    throw InputError("config: value out of range for " + k + ": " + value);
  }
}

inline PipelineConfig parse_config_text(const std::string& text,
                                        PipelineConfig base = PipelineConfig{}) {
  std::string section;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("config: expected key = value: " + line);
    apply_config_entry(base, section, detail::trim(line.substr(0, eq)),
                       detail::trim(line.substr(eq + 1)));
  }
  return base;
}

inline PipelineConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open config " + path.string());
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

// ---------------------------------------------------------------------------
// SHA-256 (FIPS 180-4), for input digests in run manifests.

class Sha256 {
 public:
  Sha256() { reset(); }

  void update(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    total_ += len;
    while (len > 0) {
      const std::size_t take = std::min(len, std::size_t(64) - fill_);
      std::memcpy(buf_.data() + fill_, p, take);
      fill_ += take;
      p += take;
      len -= take;
      if (fill_ == 64) {
        compress(buf_.data());
        fill_ = 0;
      }
    }
  }

  std::string hex_digest() {
    std::array<std::uint8_t, 64> pad{};
    pad[0] = 0x80;
    const std::uint64_t bits = total_ * 8;
    std::size_t pad_len = (fill_ < 56) ? 56 - fill_ : 120 - fill_;
    update(pad.data(), pad_len);
    std::array<std::uint8_t, 8> len_bytes;
    for (int i = 0; i < 8; ++i) len_bytes[i] = static_cast<std::uint8_t>(bits >> (56 - 8 * i));
    update(len_bytes.data(), 8);
    std::ostringstream os;
    for (std::uint32_t w : h_) os << std::hex << std::setw(8) << std::setfill('0') << w;
    reset();
    return os.str();
  }

 private:
  void reset() {
    h_ = {0x6a09e667u, 0xbb67ae85u, 0x3c6ef372u, 0xa54ff53au,
          0x510e527fu, 0x9b05688cu, 0x1f83d9abu, 0x5be0cd19u};
    fill_ = 0;
    total_ = 0;
  }

  static std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

  void compress(const std::uint8_t* p) {
    static const std::uint32_t k[64] = {
        0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4,
        0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe,
        0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f,
        0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7,
        0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
        0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
        0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116,
        0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
        0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
        0xc67178f2};
    std::uint32_t w[64];
    for (int i = 0; i < 16; ++i)
      w[i] = (std::uint32_t(p[4 * i]) << 24) | (std::uint32_t(p[4 * i + 1]) << 16) |
             (std::uint32_t(p[4 * i + 2]) << 8) | std::uint32_t(p[4 * i + 3]);
    for (int i = 16; i < 64; ++i) {
      const std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
      const std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
      w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    std::uint32_t a = h_[0], b = h_[1], c = h_[2], d = h_[3];
    std::uint32_t e = h_[4], f = h_[5], g = h_[6], h = h_[7];
    for (int i = 0; i < 64; ++i) {
      const std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
      const std::uint32_t ch = (e & f) ^ (~e & g);
      const std::uint32_t t1 = h + s1 + ch + k[i] + w[i];
      const std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
      const std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
      const std::uint32_t t2 = s0 + maj;
      h = g;
      g = f;
      f = e;
      e = d + t1;
      d = c;
      c = b;
      b = a;
      a = t1 + t2;
    }
    h_[0] += a;
    h_[1] += b;
    h_[2] += c;
    h_[3] += d;
    h_[4] += e;
    h_[5] += f;
    h_[6] += g;
    h_[7] += h;
  }

  std::array<std::uint32_t, 8> h_;
  std::array<std::uint8_t, 64> buf_;
  std::size_t fill_ = 0;
  std::uint64_t total_ = 0;
};

inline std::string sha256_hex(const void* data, std::size_t len) {
  Sha256 h;
  h.update(data, len);
  return h.hex_digest();
}

inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path.string() + " for digest");
  Sha256 h;
  char buf[65536];
  while (is) {
    is.read(buf, sizeof(buf));
    h.update(buf, static_cast<std::size_t>(is.gcount()));
  }
  return h.hex_digest();
}

// ---------------------------------------------------------------------------
// Run manifest: config snapshot, seed, input digests, output paths, timing.
// Input digests are captured before the run; the manifest is written
// atomically at completion.

struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::uint64_t seed = 0;
  nlohmann::json inputs = nlohmann::json::object();   // path -> sha256
  nlohmann::json outputs = nlohmann::json::array();   // paths
  std::string started, finished;

  void add_input(const std::filesystem::path& path) { inputs[path.string()] = sha256_file(path); }
  void add_output(const std::filesystem::path& path) { outputs.push_back(path.string()); }

  static std::string timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
  }

  void write(const std::filesystem::path& path) const {
    nlohmann::json j = {{"format", "tprm-manifest"}, {"version", 1},
                        {"command", command},        {"config", config},
                        {"seed", seed},              {"inputs", inputs},
                        {"outputs", outputs},        {"started", started},
                        {"finished", finished}};
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream os(tmp, std::ios::binary);
      if (!os) throw InputError("cannot write manifest " + path.string());
      os << j.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, path);
  }
};

}  // namespace tprm
