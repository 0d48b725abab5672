#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include <json.hpp>

#include "dpa/assembly.hpp"
#include "dpa/render.hpp"

// Fitted-state persistence: a little-endian binary container with tagged,
// versioned matrix sections plus a JSON sidecar for human inspection. Doubles
// are stored raw, so save -> load -> save reproduces identical bytes.

namespace dpa {

inline constexpr char kCheckpointMagic[8] = {'D', 'P', 'A', 'C', 'H', 'K', 'P', 'T'};

struct AssemblyCheckpoint {
  PrimitiveBank bank;
  MatX3 colors;            // C x 3
  Phase phase = Phase::One;  // last completed phase
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

namespace detail {

template <typename T>
void put(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename T>
T take(std::ifstream& in, const std::string& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof value);
  if (!in) throw ValidationError("load_checkpoint: truncated file " + path);
  return value;
}

inline void put_matrix(std::ofstream& out, std::uint32_t tag, const Mat& m) {
  put(out, tag);
  put(out, std::int64_t(m.rows()));
  put(out, std::int64_t(m.cols()));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) put(out, m(r, c));
}

inline Mat take_matrix(std::ifstream& in, std::uint32_t tag, const std::string& path) {
  const auto found = take<std::uint32_t>(in, path);
  if (found != tag)
    throw ValidationError("load_checkpoint: unexpected section in " + path);
  const auto rows = take<std::int64_t>(in, path);
  const auto cols = take<std::int64_t>(in, path);
  if (rows < 0 || cols < 0 || rows > (std::int64_t(1) << 32) ||
      cols > (std::int64_t(1) << 32))
    throw ValidationError("load_checkpoint: corrupt section size in " + path);
  Mat m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = take<double>(in, path);
  return m;
}

inline constexpr std::uint32_t fourcc(const char (&s)[5]) {
  return std::uint32_t(std::uint8_t(s[0])) | std::uint32_t(std::uint8_t(s[1])) << 8 |
         std::uint32_t(std::uint8_t(s[2])) << 16 | std::uint32_t(std::uint8_t(s[3])) << 24;
}

inline constexpr std::uint32_t kTagParams = fourcc("PRMS");
inline constexpr std::uint32_t kTagSelection = fourcc("SELT");
inline constexpr std::uint32_t kTagWeights = fourcc("WGHT");
inline constexpr std::uint32_t kTagColors = fourcc("COLR");

}  // namespace detail

inline void save_checkpoint(const AssemblyCheckpoint& ckpt, const std::string& path) {
  ckpt.bank.validate();
  if (ckpt.colors.rows() != ckpt.bank.convex_count())
    throw ValidationError("save_checkpoint: color table rows must match convex count");

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("save_checkpoint: cannot open " + path);
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put(out, std::uint32_t(kCheckpointFormatVersion));
  detail::put(out, std::uint32_t(ckpt.bank.mode == SelectionMode::Binary ? 1 : 0));
  detail::put(out, std::uint32_t(int(ckpt.phase)));
  detail::put(out, ckpt.config_hash);
  detail::put(out, ckpt.seed);
  detail::put_matrix(out, detail::kTagParams, ckpt.bank.params);
  detail::put_matrix(out, detail::kTagSelection, ckpt.bank.selection);
  detail::put_matrix(out, detail::kTagWeights, Mat(ckpt.bank.weights));
  detail::put_matrix(out, detail::kTagColors, Mat(ckpt.colors));
  if (!out) throw ValidationError("save_checkpoint: write failed for " + path);
  out.close();

  nlohmann::json meta;
  meta["format_version"] = kCheckpointFormatVersion;
  meta["mode"] = ckpt.bank.mode == SelectionMode::Binary ? "binary" : "float";
  meta["phase"] = int(ckpt.phase);
  meta["primitives"] = ckpt.bank.primitive_count();
  meta["convexes"] = ckpt.bank.convex_count();
  meta["config_hash"] = ckpt.config_hash;
  meta["seed"] = ckpt.seed;
  std::ofstream side(path + ".json");
  if (!side) throw ValidationError("save_checkpoint: cannot open " + path + ".json");
  side << meta.dump(2) << "\n";
  if (!side) throw ValidationError("save_checkpoint: write failed for " + path + ".json");
}

inline AssemblyCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("load_checkpoint: cannot open " + path);

  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw ValidationError("load_checkpoint: " + path + " is not a checkpoint");
  const auto version = detail::take<std::uint32_t>(in, path);
  if (version != std::uint32_t(kCheckpointFormatVersion))
    throw ValidationError("load_checkpoint: " + path + " has format version " +
                          std::to_string(version) + ", this build reads version " +
                          std::to_string(kCheckpointFormatVersion));

  AssemblyCheckpoint ckpt;
  const auto mode = detail::take<std::uint32_t>(in, path);
  if (mode > 1) throw ValidationError("load_checkpoint: corrupt mode in " + path);
  ckpt.bank.mode = mode == 1 ? SelectionMode::Binary : SelectionMode::Float;
  const auto phase = detail::take<std::uint32_t>(in, path);
  if (phase < 1 || phase > 3)
    throw ValidationError("load_checkpoint: corrupt phase in " + path);
  ckpt.phase = Phase(phase);
  ckpt.config_hash = detail::take<std::uint64_t>(in, path);
  ckpt.seed = detail::take<std::uint64_t>(in, path);

  ckpt.bank.params = detail::take_matrix(in, detail::kTagParams, path);
  ckpt.bank.selection = detail::take_matrix(in, detail::kTagSelection, path);
  const Mat weights = detail::take_matrix(in, detail::kTagWeights, path);
  const Mat colors = detail::take_matrix(in, detail::kTagColors, path);
  if (weights.cols() != 1 || colors.cols() != 3)
    throw ValidationError("load_checkpoint: corrupt section shape in " + path);
  ckpt.bank.weights = weights.col(0);
  ckpt.colors = colors;
  ckpt.bank.validate();
  if (ckpt.colors.rows() != ckpt.bank.convex_count())
    throw ValidationError("load_checkpoint: color table rows must match convex count");
  return ckpt;
}

}  // namespace dpa
