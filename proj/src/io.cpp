#include "pcn/io.hpp"

#include "pcn/text.hpp"

#include <bit>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace pcn {
namespace fs = std::filesystem;

namespace {

constexpr char kTensorMagic[4] = {'P', 'C', 'N', 'T'};
constexpr char kCheckpointMagic[4] = {'P', 'C', 'N', 'C'};
constexpr std::uint8_t kTensorVersion = 1;
constexpr std::uint32_t kCheckpointVersion = 1;

class ByteWriter {
 public:
  void raw(std::string_view s) { out_.append(s); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(std::string_view s) {
    u64(s.size());
    raw(s);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  ByteReader(std::string_view data, const char* what) : data_(data), what_(what) {}

  std::string_view raw(std::size_t n) {
    if (data_.size() - pos_ < n) {
      throw FormatError(FormatError::Kind::truncated, std::string(what_) + ": truncated (needed " + std::to_string(n) +
                                                          " more bytes at offset " + std::to_string(pos_) + ")");
    }
    std::string_view v = data_.substr(pos_, n);
    pos_ += n;
    return v;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(raw(1)[0]); }
  std::uint32_t u32() {
    auto s = raw(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(s[i]);
    return v;
  }
  std::uint64_t u64() {
    auto s = raw(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(s[i]);
    return v;
  }
  std::string_view bytes() {
    const std::uint64_t n = u64();
    if (n > remaining()) {
      throw FormatError(FormatError::Kind::truncated,
                        std::string(what_) + ": truncated (length field " + std::to_string(n) + " exceeds the " +
                            std::to_string(remaining()) + " remaining bytes)");
    }
    return raw(n);
  }
  std::size_t remaining() const { return data_.size() - pos_; }
  void finish() const {
    if (remaining() != 0) {
      throw FormatError(FormatError::Kind::trailing_bytes,
                        std::string(what_) + ": " + std::to_string(remaining()) + " trailing bytes after payload");
    }
  }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
  const char* what_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Tensor files

std::uint64_t RawTensor::count() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

template <typename Scalar>
Vector<Scalar> RawTensor::values() const {
  if (dtype == DType::f32) {
    return Eigen::Map<const Vector<float>>(f32.data(), static_cast<Index>(f32.size())).template cast<Scalar>();
  }
  return Eigen::Map<const Vector<double>>(f64.data(), static_cast<Index>(f64.size())).template cast<Scalar>();
}

template <typename Scalar>
RawTensor make_raw_tensor(const std::vector<Index>& dims, const Scalar* data) {
  RawTensor t;
  t.dtype = dtype_of<Scalar>();
  std::uint64_t n = 1;
  for (Index d : dims) {
    if (d < 0) throw ShapeError("negative tensor dimension");
    t.dims.push_back(static_cast<std::uint64_t>(d));
    n *= static_cast<std::uint64_t>(d);
  }
  if constexpr (std::is_same_v<Scalar, float>) {
    t.f32.assign(data, data + n);
  } else {
    t.f64.assign(data, data + n);
  }
  return t;
}

std::string encode_tensor(const RawTensor& t) {
  ByteWriter w;
  w.raw(std::string_view(kTensorMagic, 4));
  w.u8(kTensorVersion);
  w.u8(static_cast<std::uint8_t>(t.dtype));
  w.u8(0);
  w.u8(0);
  w.u32(static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) w.u64(d);
  if (t.dtype == DType::f32) {
    if (t.f32.size() != t.count()) throw ShapeError("tensor payload does not match its dims");
    for (float v : t.f32) w.u32(std::bit_cast<std::uint32_t>(v));
  } else {
    if (t.f64.size() != t.count()) throw ShapeError("tensor payload does not match its dims");
    for (double v : t.f64) w.u64(std::bit_cast<std::uint64_t>(v));
  }
  return w.take();
}

RawTensor decode_tensor(std::string_view bytes) {
  ByteReader r(bytes, "tensor file");
  if (bytes.size() < 4 || bytes.substr(0, 4) != std::string_view(kTensorMagic, 4)) {
    throw FormatError(FormatError::Kind::bad_magic, "tensor file: bad magic (expected PCNT)");
  }
  r.raw(4);
  const std::uint8_t version = r.u8();
  if (version != kTensorVersion) {
    throw FormatError(FormatError::Kind::bad_version, "tensor file: unsupported version " + std::to_string(version));
  }
  const std::uint8_t dtype = r.u8();
  if (dtype > 1) throw FormatError(FormatError::Kind::bad_dtype, "tensor file: unknown dtype " + std::to_string(dtype));
  if (r.u8() != 0 || r.u8() != 0) {
    throw FormatError(FormatError::Kind::bad_header, "tensor file: reserved header bytes are not zero");
  }
  RawTensor t;
  t.dtype = static_cast<DType>(dtype);
  const std::uint32_t ndim = r.u32();
  if (ndim > 16) throw FormatError(FormatError::Kind::bad_header, "tensor file: implausible ndim " + std::to_string(ndim));
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    t.dims.push_back(r.u64());
    count *= t.dims.back();
  }
  const std::size_t width = t.dtype == DType::f32 ? 4 : 8;
  if (count > r.remaining() / width) {
    throw FormatError(FormatError::Kind::truncated, "tensor file: truncated payload (" + std::to_string(r.remaining()) +
                                                        " bytes for " + std::to_string(count) + " values)");
  }
  if (t.dtype == DType::f32) {
    t.f32.resize(count);
    for (auto& v : t.f32) v = std::bit_cast<float>(r.u32());
  } else {
    t.f64.resize(count);
    for (auto& v : t.f64) v = std::bit_cast<double>(r.u64());
  }
  r.finish();
  return t;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("failed reading '" + path.string() + "'");
  return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

template <typename Scalar>
void write_tensor_file(const fs::path& path, const Grid4<Scalar>& grid) {
  const Shape4& s = grid.shape();
  write_file(path, encode_tensor(make_raw_tensor<Scalar>({s.n, s.c, s.h, s.w}, grid.data())));
}

template <typename Scalar>
Grid4<Scalar> read_tensor_file(const fs::path& path) {
  RawTensor t;
  try {
    t = decode_tensor(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), path.string() + ": " + e.what());
  }
  if (t.dims.size() > 4) throw ShapeError(path.string() + ": tensor has " + std::to_string(t.dims.size()) + " dims, at most 4 supported");
  std::array<Index, 4> d{1, 1, 1, 1};
  for (std::size_t i = 0; i < t.dims.size(); ++i) d[4 - t.dims.size() + i] = static_cast<Index>(t.dims[i]);
  return Grid4<Scalar>(Shape4{d[0], d[1], d[2], d[3]}, t.values<Scalar>());
}

// ---------------------------------------------------------------------------
// Run configuration

namespace {

std::string shortcuts_text(const std::vector<Shortcut>& s) {
  if (s.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += (i ? "," : "") + std::to_string(s[i].encoder) + ":" + std::to_string(s[i].decoder);
  }
  return out;
}

std::vector<Shortcut> parse_shortcuts(std::string_view v) {
  std::vector<Shortcut> out;
  if (v == "none") return out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    const std::string_view item = trim(v.substr(0, comma));
    const auto colon = item.find(':');
    if (colon == std::string_view::npos) throw ConfigError("shortcuts: expected encoder:decoder pairs, got '" + std::string(item) + "'");
    out.push_back({parse_int<int>(trim(item.substr(0, colon)), "shortcuts"),
                   parse_int<int>(trim(item.substr(colon + 1)), "shortcuts")});
    v = comma == std::string_view::npos ? std::string_view{} : v.substr(comma + 1);
  }
  return out;
}

bool parse_bool(std::string_view v, std::string_view key) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}

}  // namespace

std::vector<std::pair<std::string, std::string>> split_config_lines(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key=value, got '" + std::string(line) + "'");
    }
    out.emplace_back(std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))));
  }
  return out;
}

void apply_config_lines(RunConfig& c, const std::vector<std::pair<std::string, std::string>>& entries) {
  std::set<std::string> seen;
  bool shortcuts_given = false;
  for (const auto& [key, value] : entries) {
    if (!seen.insert(key).second) throw ConfigError("duplicate config key '" + key + "'");
    try {
      if (key == "n_clones") c.model.n_clones = parse_int<int>(value, key);
      else if (key == "transfer_mode") c.model.transfer_mode = parse_transfer_mode(value);
      else if (key == "input_mode") c.model.input_mode = parse_input_mode(value);
      else if (key == "residual_mode") c.model.residual_mode = parse_residual_mode(value);
      else if (key == "loss_mode") c.model.loss_mode = parse_loss_mode(value);
      else if (key == "n_layers") c.model.topology.n_layers = parse_int<int>(value, key);
      else if (key == "n_kernels") c.model.topology.n_kernels = parse_int<int>(value, key);
      else if (key == "shortcuts") {
        c.model.topology.shortcuts = parse_shortcuts(value);
        shortcuts_given = true;
      } else if (key == "batch_size") c.train.batch_size = parse_int<int>(value, key);
      else if (key == "epochs") c.train.n_epochs = parse_int<int>(value, key);
      else if (key == "lr_initial") c.train.lr_initial = parse_double(value, key);
      else if (key == "lr_final") c.train.lr_final = parse_double(value, key);
      else if (key == "seed") c.train.seed = parse_int<std::uint64_t>(value, key);
      else if (key == "wall_time") c.train.record_wall_time = parse_bool(value, key);
      else if (key == "patch") c.data.patch = parse_int<Index>(value, key);
      else if (key == "stride") c.data.stride = parse_int<Index>(value, key);
      else if (key == "max_patches") c.data.max_patches = parse_int<Index>(value, key);
      else throw ConfigError("unknown config key '" + key + "'");
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  if (seen.count("n_layers") && !shortcuts_given) {
    c.model.topology.shortcuts = ModuleTopology::symmetric_shortcuts(c.model.topology.n_layers);
  }
  c.model.validate();
  c.train.validate();
  if (c.data.patch < c.model.min_image_size()) {
    throw ConfigError("patch " + std::to_string(c.data.patch) + " is smaller than the minimum image size " +
                      std::to_string(c.model.min_image_size()) + " for n_layers=" +
                      std::to_string(c.model.topology.n_layers));
  }
  if (c.data.stride < 1) throw ConfigError("stride must be positive");
  if (c.data.max_patches < 0) throw ConfigError("max_patches must be non-negative");
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig c;
  apply_config_lines(c, split_config_lines(text));
  return c;
}

std::string to_config_text(const RunConfig& c) {
  std::string s;
  auto put = [&s](std::string_view k, const std::string& v) { s.append(k).append("=").append(v).append("\n"); };
  put("n_clones", std::to_string(c.model.n_clones));
  put("transfer_mode", std::string(to_string(c.model.transfer_mode)));
  put("input_mode", std::string(to_string(c.model.input_mode)));
  put("residual_mode", std::string(to_string(c.model.residual_mode)));
  put("loss_mode", std::string(to_string(c.model.loss_mode)));
  put("n_layers", std::to_string(c.model.topology.n_layers));
  put("n_kernels", std::to_string(c.model.topology.n_kernels));
  put("shortcuts", shortcuts_text(c.model.topology.shortcuts));
  put("batch_size", std::to_string(c.train.batch_size));
  put("epochs", std::to_string(c.train.n_epochs));
  put("lr_initial", format_double(c.train.lr_initial));
  put("lr_final", format_double(c.train.lr_final));
  put("seed", std::to_string(c.train.seed));
  put("wall_time", c.train.record_wall_time ? "true" : "false");
  put("patch", std::to_string(c.data.patch));
  put("stride", std::to_string(c.data.stride));
  put("max_patches", std::to_string(c.data.max_patches));
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

std::string log_row_text(const EpochRecord& r) {
  return std::to_string(r.epoch) + "," + format_double(r.lr) + "," + format_double(r.train_rmse) + "," +
         format_double(r.wall_seconds);
}

template <typename T>
void add_records(ByteWriter& w, const std::string& prefix, const std::vector<NamedTensor<T>>& tensors) {
  for (const auto& t : tensors) {
    w.bytes(prefix + t.name);
    w.bytes(encode_tensor(make_raw_tensor<float>(t.dims, t.data)));
  }
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  check_parameters(ckpt.config.model, ckpt.params);
  std::string text = to_config_text(ckpt.config);
  text += "epoch=" + std::to_string(ckpt.epoch) + "\n";
  if (ckpt.adam) text += "adam_step=" + std::to_string(ckpt.adam->step) + "\n";
  for (const auto& r : ckpt.log.rows) text += "log=" + log_row_text(r) + "\n";

  const auto params = ckpt.params.tensors();
  std::uint64_t records = params.size();
  if (ckpt.adam) records += 2 * params.size();

  ByteWriter w;
  w.raw(std::string_view(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.bytes(text);
  w.u64(records);
  add_records(w, "", params);
  if (ckpt.adam) {
    add_records(w, "adam.m.", ckpt.adam->m.tensors());
    add_records(w, "adam.v.", ckpt.adam->v.tensors());
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != std::string_view(kCheckpointMagic, 4)) {
    throw FormatError(FormatError::Kind::bad_magic, "checkpoint: bad magic (expected PCNC)");
  }
  ByteReader r(bytes, "checkpoint");
  r.raw(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(FormatError::Kind::bad_version, "checkpoint: unsupported version " + std::to_string(version));
  }
  const std::string_view text = r.bytes();

  std::vector<std::pair<std::string, std::string>> config_lines;
  Checkpoint ckpt;
  std::optional<std::int64_t> adam_step;
  bool epoch_seen = false;
  for (auto& [k, v] : split_config_lines(text)) {
    if (k == "epoch") {
      ckpt.epoch = parse_int<int>(v, k);
      epoch_seen = true;
    } else if (k == "adam_step") {
      adam_step = parse_int<std::int64_t>(v, k);
    } else if (k == "log") {
      ConvergenceLog one = ConvergenceLog::from_csv("epoch,lr,train_rmse,wall_seconds\n" + v + "\n");
      ckpt.log.rows.insert(ckpt.log.rows.end(), one.rows.begin(), one.rows.end());
    } else {
      config_lines.emplace_back(std::move(k), std::move(v));
    }
  }
  if (!epoch_seen) throw FormatError(FormatError::Kind::bad_record, "checkpoint: missing epoch");
  apply_config_lines(ckpt.config, config_lines);

  ckpt.params = ParameterSet<float>::zeros(ckpt.config.model);
  if (adam_step) ckpt.adam = AdamState<float>{ckpt.params.zeros_like(), ckpt.params.zeros_like(), *adam_step};

  std::map<std::string, NamedTensor<float>> expected;
  for (auto& t : ckpt.params.tensors()) expected.emplace(t.name, t);
  if (ckpt.adam) {
    for (auto t : ckpt.adam->m.tensors()) expected.emplace("adam.m." + t.name, t);
    for (auto t : ckpt.adam->v.tensors()) expected.emplace("adam.v." + t.name, t);
  }

  const std::uint64_t records = r.u64();
  if (records != expected.size()) {
    throw FormatError(FormatError::Kind::bad_record, "checkpoint: " + std::to_string(records) +
                                                         " tensor records, config requires " +
                                                         std::to_string(expected.size()));
  }
  std::set<std::string> loaded;
  for (std::uint64_t i = 0; i < records; ++i) {
    const std::string name(r.bytes());
    const auto it = expected.find(name);
    if (it == expected.end() || !loaded.insert(name).second) {
      throw FormatError(FormatError::Kind::bad_record, "checkpoint: unexpected or repeated record '" + name + "'");
    }
    const RawTensor t = decode_tensor(r.bytes());
    std::vector<std::uint64_t> want(it->second.dims.begin(), it->second.dims.end());
    if (t.dims != want) throw ShapeError("checkpoint: record '" + name + "' does not match the config's shape");
    if (t.dtype != DType::f32) throw FormatError(FormatError::Kind::bad_dtype, "checkpoint: record '" + name + "' is not f32");
    it->second.vec() = Eigen::Map<const Vector<float>>(t.f32.data(), static_cast<Index>(t.f32.size()));
  }
  r.finish();
  return ckpt;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) { write_file(path, encode_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const fs::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Manifests

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  const std::string text = read_file(path);
  const fs::path base = path.parent_path();
  std::vector<ManifestEntry> out;
  std::set<std::string> ids;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() < 2 || fields.size() > 3 || fields[0].empty()) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected id<TAB>path[<TAB>path]");
    }
    if (!ids.insert(fields[0]).second) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": duplicate id '" + fields[0] + "'");
    }
    ManifestEntry e{fields[0], {}};
    for (std::size_t i = 1; i < fields.size(); ++i) {
      fs::path p(fields[i]);
      e.paths.push_back(p.is_absolute() ? p : base / p);
    }
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::string text;
  for (const auto& e : entries) {
    text += e.id;
    for (const auto& p : e.paths) text += "\t" + p.generic_string();
    text += "\n";
  }
  write_file(path, text);
}

template <typename Scalar>
std::vector<ImagePair<Scalar>> load_image_pairs(const fs::path& manifest) {
  std::vector<ImagePair<Scalar>> pairs;
  for (const auto& e : read_manifest(manifest)) {
    if (e.paths.size() != 2) {
      throw IoError(manifest.string() + ": entry '" + e.id + "' needs low-dose and normal-dose paths");
    }
    ImagePair<Scalar> p{read_tensor_file<Scalar>(e.paths[0]), read_tensor_file<Scalar>(e.paths[1]), e.id};
    if (p.low_dose.shape() != p.normal_dose.shape()) {
      throw ShapeError(manifest.string() + ": entry '" + e.id + "' pairs images of shape " + p.low_dose.shape().str() +
                       " and " + p.normal_dose.shape().str());
    }
    pairs.push_back(std::move(p));
  }
  if (pairs.empty()) throw IoError(manifest.string() + ": no entries");
  return pairs;
}

#define PCN_INSTANTIATE_IO(S)                                                     \
  template Vector<S> RawTensor::values<S>() const;                                \
  template RawTensor make_raw_tensor<S>(const std::vector<Index>&, const S*);     \
  template void write_tensor_file(const fs::path&, const Grid4<S>&);              \
  template Grid4<S> read_tensor_file<S>(const fs::path&);                         \
  template std::vector<ImagePair<S>> load_image_pairs<S>(const fs::path&);

PCN_INSTANTIATE_IO(float)
PCN_INSTANTIATE_IO(double)

}  // namespace pcn
