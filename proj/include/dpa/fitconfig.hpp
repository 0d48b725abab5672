#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dpa/common.hpp"

// Fit configuration with spec-default values, a human-readable key/value file
// format (one `key = value` per line, `#` comments), and a stable hash of the
// canonical serialization that reports embed for reproducibility.

namespace dpa {

struct FitConfig {
  // Model size
  Index n_primitives = 4096;
  Index n_convexes = 256;
  bool rgb = true;

  // Per-step sampling
  Index samples_per_ray = 96;
  Index random_pixels = 256;
  Index contour_pixels = 1000;
  double contour_noise_sigma = 2.0;
  bool stratified = true;

  // Schedule
  Index phase1_iters = 3000;
  Index phase2_iters = 2000;
  Index phase3_iters = 2000;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  // Phase-3 machinery
  double binarize_threshold = 0.01;
  Index overlap_probes = 40960;
  Index overlap_batch = 4096;  // probes drawn per step from the pool
  Index dropout_period = 400;
  double dropout_v_threshold = 0.002;
  double probe_dilation = 0.1;

  // Run control
  std::uint64_t seed = 0;
  bool round_robin_views = false;  // default: random training view per step
  bool use_float32 = false;        // fast path for forward/backward
  int threads = 0;                 // 0 = hardware concurrency
  std::vector<Index> holdout_views;

  void validate() const {
    if (n_primitives < 1 || n_convexes < 1)
      throw ValidationError("FitConfig: model sizes must be positive");
    if (samples_per_ray < 2)
      throw ValidationError("FitConfig: need at least 2 samples per ray");
    if (random_pixels + contour_pixels < 1)
      throw ValidationError("FitConfig: empty pixel batch");
    if (phase1_iters < 0 || phase2_iters < 0 || phase3_iters < 0)
      throw ValidationError("FitConfig: negative iteration budget");
    if (!(lr > 0.0)) throw ValidationError("FitConfig: learning rate must be positive");
    if (!(binarize_threshold > 0.0 && binarize_threshold < 1.0))
      throw ValidationError("FitConfig: binarize threshold must lie in (0,1)");
    if (overlap_probes < 1 || overlap_batch < 1 || overlap_batch > overlap_probes)
      throw ValidationError("FitConfig: overlap batch must fit in the probe pool");
    if (dropout_period < 0)
      throw ValidationError("FitConfig: dropout period must be non-negative");
    if (!(dropout_v_threshold >= 0.0))
      throw ValidationError("FitConfig: dropout threshold must be non-negative");
    if (!(contour_noise_sigma >= 0.0))
      throw ValidationError("FitConfig: contour noise sigma must be non-negative");
  }
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("FitConfig: boolean expected for '" + key + "', got '" + v + "'");
}

inline double parse_double(const std::string& v, const std::string& key) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ValidationError("FitConfig: number expected for '" + key + "', got '" + v + "'");
  }
  if (used != v.size())
    throw ValidationError("FitConfig: trailing characters in value for '" + key + "'");
  return out;
}

inline long long parse_int(const std::string& v, const std::string& key) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    throw ValidationError("FitConfig: integer expected for '" + key + "', got '" + v + "'");
  }
  if (used != v.size())
    throw ValidationError("FitConfig: trailing characters in value for '" + key + "'");
  return out;
}

inline std::vector<Index> parse_index_list(const std::string& v, const std::string& key) {
  std::vector<Index> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(Index(parse_int(item, key)));
  }
  return out;
}

}  // namespace detail

// Canonical serialization: fixed key order, full double precision. The
// config hash is FNV-1a over these bytes.
inline std::string serialize_fit_config(const FitConfig& c) {
  std::ostringstream out;
  const auto b = [](bool v) { return v ? "true" : "false"; };
  out << "n_primitives = " << c.n_primitives << "\n";
  out << "n_convexes = " << c.n_convexes << "\n";
  out << "rgb = " << b(c.rgb) << "\n";
  out << "samples_per_ray = " << c.samples_per_ray << "\n";
  out << "random_pixels = " << c.random_pixels << "\n";
  out << "contour_pixels = " << c.contour_pixels << "\n";
  out << "contour_noise_sigma = " << detail::fmt_double(c.contour_noise_sigma) << "\n";
  out << "stratified = " << b(c.stratified) << "\n";
  out << "phase1_iters = " << c.phase1_iters << "\n";
  out << "phase2_iters = " << c.phase2_iters << "\n";
  out << "phase3_iters = " << c.phase3_iters << "\n";
  out << "lr = " << detail::fmt_double(c.lr) << "\n";
  out << "beta1 = " << detail::fmt_double(c.beta1) << "\n";
  out << "beta2 = " << detail::fmt_double(c.beta2) << "\n";
  out << "adam_eps = " << detail::fmt_double(c.adam_eps) << "\n";
  out << "binarize_threshold = " << detail::fmt_double(c.binarize_threshold) << "\n";
  out << "overlap_probes = " << c.overlap_probes << "\n";
  out << "overlap_batch = " << c.overlap_batch << "\n";
  out << "dropout_period = " << c.dropout_period << "\n";
  out << "dropout_v_threshold = " << detail::fmt_double(c.dropout_v_threshold) << "\n";
  out << "probe_dilation = " << detail::fmt_double(c.probe_dilation) << "\n";
  out << "seed = " << c.seed << "\n";
  out << "round_robin_views = " << b(c.round_robin_views) << "\n";
  out << "use_float32 = " << b(c.use_float32) << "\n";
  out << "threads = " << c.threads << "\n";
  out << "holdout_views = ";
  for (std::size_t i = 0; i < c.holdout_views.size(); ++i)
    out << (i ? "," : "") << c.holdout_views[i];
  out << "\n";
  return out.str();
}

inline std::uint64_t config_hash(const FitConfig& c) {
  const std::string s = serialize_fit_config(c);
  return fnv1a(s.data(), s.size());
}

// Parse `key = value` lines on top of `base` (defaults when omitted). Values
// are checked as they are read; cross-field validation is deferred to
// FitConfig::validate() so partial overlays can be chained.
inline FitConfig parse_fit_config(const std::string& text, FitConfig base = {}) {
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("FitConfig: expected 'key = value', got '" + line + "'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));

    if (key == "n_primitives") base.n_primitives = Index(detail::parse_int(val, key));
    else if (key == "n_convexes") base.n_convexes = Index(detail::parse_int(val, key));
    else if (key == "rgb") base.rgb = detail::parse_bool(val, key);
    else if (key == "samples_per_ray") base.samples_per_ray = Index(detail::parse_int(val, key));
    else if (key == "random_pixels") base.random_pixels = Index(detail::parse_int(val, key));
    else if (key == "contour_pixels") base.contour_pixels = Index(detail::parse_int(val, key));
    else if (key == "contour_noise_sigma") base.contour_noise_sigma = detail::parse_double(val, key);
    else if (key == "stratified") base.stratified = detail::parse_bool(val, key);
    else if (key == "phase1_iters") base.phase1_iters = Index(detail::parse_int(val, key));
    else if (key == "phase2_iters") base.phase2_iters = Index(detail::parse_int(val, key));
    else if (key == "phase3_iters") base.phase3_iters = Index(detail::parse_int(val, key));
    else if (key == "lr") base.lr = detail::parse_double(val, key);
    else if (key == "beta1") base.beta1 = detail::parse_double(val, key);
    else if (key == "beta2") base.beta2 = detail::parse_double(val, key);
    else if (key == "adam_eps") base.adam_eps = detail::parse_double(val, key);
    else if (key == "binarize_threshold") base.binarize_threshold = detail::parse_double(val, key);
    else if (key == "overlap_probes") base.overlap_probes = Index(detail::parse_int(val, key));
    else if (key == "overlap_batch") base.overlap_batch = Index(detail::parse_int(val, key));
    else if (key == "dropout_period") base.dropout_period = Index(detail::parse_int(val, key));
    else if (key == "dropout_v_threshold") base.dropout_v_threshold = detail::parse_double(val, key);
    else if (key == "probe_dilation") base.probe_dilation = detail::parse_double(val, key);
    else if (key == "seed") base.seed = std::uint64_t(detail::parse_int(val, key));
    else if (key == "round_robin_views") base.round_robin_views = detail::parse_bool(val, key);
    else if (key == "use_float32") base.use_float32 = detail::parse_bool(val, key);
    else if (key == "threads") base.threads = int(detail::parse_int(val, key));
    else if (key == "holdout_views") base.holdout_views = detail::parse_index_list(val, key);
    else throw ValidationError("FitConfig: unknown key '" + key + "'");
  }
  return base;
}

inline FitConfig load_fit_config(const std::string& path, FitConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ValidationError("FitConfig: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_fit_config(buf.str(), base);
}

}  // namespace dpa
