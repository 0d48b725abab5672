#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpa {

inline constexpr int kCheckpointFormatVersion = 1;

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Vec3 = Eigen::Vector3d;
using MatX3 = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Index = Eigen::Index;

// Base error. The CLI maps ValidationError to exit code 1 and
// NumericalError to exit code 2.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& msg) : Error(msg) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& msg) : Error(msg) {}
};

// Warnings go to stderr and, when a sink is installed, to that sink as well
// (run_fit attaches one so FitReport can collect them).
class WarningSink {
 public:
  static WarningSink& instance() {
    static WarningSink sink;
    return sink;
  }
  void emit(const std::string& msg) {
    std::cerr << "[warn] " << msg << "\n";
    if (collector_) collector_->push_back(msg);
  }
  void attach(std::vector<std::string>* collector) { collector_ = collector; }
  void detach() { collector_ = nullptr; }

 private:
  std::vector<std::string>* collector_ = nullptr;
};

inline void warn(const std::string& msg) { WarningSink::instance().emit(msg); }

template <typename T>
inline T clip01(T x) {
  return x < T(0) ? T(0) : (x > T(1) ? T(1) : x);
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

// FNV-1a, used for config hashes and branch signatures.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s,
                           std::uint64_t seed = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), seed);
}

}  // namespace dpa
