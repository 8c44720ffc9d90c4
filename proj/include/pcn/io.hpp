#pragma once

// On-disk formats. All binary formats are little-endian with fixed-width fields.
//
// Tensor file:
//   "PCNT" | u8 version=1 | u8 dtype (0 f32, 1 f64) | u8 0 | u8 0 | u32 ndim |
//   u64 dims[ndim] | row-major payload
//
// Checkpoint:
//   "PCNC" | u32 version=1 | u64 len | config text | u64 record count |
//   records: u64 name len | name | u64 len | tensor file bytes

#include "pcn/clone_net.hpp"
#include "pcn/data.hpp"
#include "pcn/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pcn {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  enum class Kind { bad_magic, bad_version, bad_dtype, bad_header, truncated, trailing_bytes, bad_record };

  FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename Scalar>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>);
  return std::is_same_v<Scalar, float> ? DType::f32 : DType::f64;
}

/// Decoded tensor file; values are held in the stored precision.
struct RawTensor {
  DType dtype = DType::f32;
  std::vector<std::uint64_t> dims;
  std::vector<float> f32;
  std::vector<double> f64;

  std::uint64_t count() const;
  template <typename Scalar>
  Vector<Scalar> values() const;
};

template <typename Scalar>
RawTensor make_raw_tensor(const std::vector<Index>& dims, const Scalar* data);

std::string encode_tensor(const RawTensor& t);
RawTensor decode_tensor(std::string_view bytes);

/// Grids are stored with ndim = 4; tensors with fewer dims load with leading 1s.
template <typename Scalar>
void write_tensor_file(const std::filesystem::path& path, const Grid4<Scalar>& grid);
template <typename Scalar>
Grid4<Scalar> read_tensor_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

struct DataConfig {
  Index patch = 55;
  Index stride = 4;
  Index max_patches = 0;  // 0 keeps all
  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

/// The `key=value` run configuration consumed by `pcn train` and `pcn ablate`.
struct RunConfig {
  CloneNetConfig model;
  TrainConfig train;
  DataConfig data;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Strict parser: unknown or repeated keys and malformed values are errors.
/// `#` starts a comment; blank lines are ignored.
RunConfig parse_run_config(std::string_view text);
/// Applies `key=value` lines on top of an existing config.
void apply_config_lines(RunConfig& config, const std::vector<std::pair<std::string, std::string>>& entries);
std::vector<std::pair<std::string, std::string>> split_config_lines(std::string_view text);
/// Canonical text; parse_run_config(to_config_text(c)) == c.
std::string to_config_text(const RunConfig& config);

struct Checkpoint {
  RunConfig config;
  ParameterSet<float> params;
  std::optional<AdamState<float>> adam;
  int epoch = 0;
  ConvergenceLog log;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Validates every tensor against the embedded config.
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// One manifest line: `id<TAB>path[<TAB>path]`. Relative paths are resolved
/// against the manifest's directory when read.
struct ManifestEntry {
  std::string id;
  std::vector<std::filesystem::path> paths;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// Reads a three-column `id<TAB>low<TAB>normal` manifest into image pairs.
template <typename Scalar>
std::vector<ImagePair<Scalar>> load_image_pairs(const std::filesystem::path& manifest);

}  // namespace pcn
