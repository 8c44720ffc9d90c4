#include "oracles.hpp"

#include "pcn/ablation.hpp"
#include "pcn/io.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <limits>

using namespace pcn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pcn_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

FormatError::Kind decode_kind(const std::string& bytes) {
  try {
    decode_tensor(bytes);
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no FormatError";
  return FormatError::Kind::bad_record;
}

TEST(TensorFile, HeaderLayout) {
  const std::vector<float> v{1.0f, -2.0f};
  const std::string b = encode_tensor(make_raw_tensor<float>({1, 2}, v.data()));
  ASSERT_EQ(b.size(), 4 + 4 + 4 + 16 + 8u);
  EXPECT_EQ(b.substr(0, 4), "PCNT");
  EXPECT_EQ(b[4], 1);
  EXPECT_EQ(b[5], 0);
  EXPECT_EQ(b[6], 0);
  EXPECT_EQ(b[7], 0);
  EXPECT_EQ(b.substr(8, 4), std::string("\x02\x00\x00\x00", 4));
  EXPECT_EQ(b.substr(12, 8), std::string("\x01\x00\x00\x00\x00\x00\x00\x00", 8));
  EXPECT_EQ(b.substr(28, 4), std::string("\x00\x00\x80\x3f", 4));  // 1.0f little-endian
}

TEST(TensorFile, BitExactRoundTripBothPrecisions) {
  const fs::path dir = scratch("roundtrip");
  Rng rng(1);
  Grid4<double> d = oracle::random_grid({2, 3, 4, 5}, rng);
  d.data()[0] = -0.0;
  d.data()[1] = std::numeric_limits<double>::denorm_min();
  d.data()[2] = std::numeric_limits<double>::infinity();
  write_tensor_file(dir / "d.pcnt", d);
  const auto d2 = read_tensor_file<double>(dir / "d.pcnt");
  EXPECT_EQ(d2.shape(), d.shape());
  EXPECT_EQ(std::memcmp(d2.data(), d.data(), sizeof(double) * d.size()), 0);

  const Grid4<float> f = d.cast<float>();
  write_tensor_file(dir / "f.pcnt", f);
  const auto f2 = read_tensor_file<float>(dir / "f.pcnt");
  EXPECT_EQ(std::memcmp(f2.data(), f.data(), sizeof(float) * f.size()), 0);
  write_tensor_file(dir / "f2.pcnt", f2);
  EXPECT_EQ(read_file(dir / "f.pcnt"), read_file(dir / "f2.pcnt"));
}

TEST(TensorFile, FewerDimsLoadWithLeadingOnes) {
  const fs::path dir = scratch("dims");
  const std::vector<double> v{1, 2, 3, 4, 5, 6};
  write_file(dir / "m.pcnt", encode_tensor(make_raw_tensor<double>({2, 3}, v.data())));
  const auto g = read_tensor_file<double>(dir / "m.pcnt");
  EXPECT_EQ(g.shape(), (Shape4{1, 1, 2, 3}));
  EXPECT_EQ(g(0, 0, 1, 2), 6.0);
}

TEST(TensorFile, CorruptionKindsAreDistinct) {
  const std::vector<double> v{1, 2, 3};
  const std::string good = encode_tensor(make_raw_tensor<double>({3}, v.data()));
  std::string bad = good;
  bad[0] = 'X';
  EXPECT_EQ(decode_kind(bad), FormatError::Kind::bad_magic);
  bad = good;
  bad[4] = 2;
  EXPECT_EQ(decode_kind(bad), FormatError::Kind::bad_version);
  bad = good;
  bad[5] = 7;
  EXPECT_EQ(decode_kind(bad), FormatError::Kind::bad_dtype);
  bad = good;
  bad[6] = 1;
  EXPECT_EQ(decode_kind(bad), FormatError::Kind::bad_header);
  EXPECT_EQ(decode_kind(good.substr(0, good.size() - 1)), FormatError::Kind::truncated);
  EXPECT_EQ(decode_kind(good.substr(0, 10)), FormatError::Kind::truncated);
  EXPECT_EQ(decode_kind(good + "x"), FormatError::Kind::trailing_bytes);
}

TEST(TensorFile, MissingFileIsIoError) {
  EXPECT_THROW(read_tensor_file<float>("/nonexistent/dir/x.pcnt"), IoError);
}

RunConfig small_run_config() {
  RunConfig c;
  c.model = CloneNetConfig::parallel(2, ModuleTopology{4, 3, ModuleTopology::symmetric_shortcuts(4)});
  c.train.batch_size = 4;
  c.train.n_epochs = 3;
  c.train.lr_initial = 1e-3;
  c.train.lr_final = 1e-4;
  c.train.seed = 5;
  c.train.record_wall_time = false;
  c.data = {11, 9, 16};
  return c;
}

TEST(RunConfigText, CanonicalRoundTrip) {
  const RunConfig c = small_run_config();
  const std::string text = to_config_text(c);
  EXPECT_EQ(parse_run_config(text), c);
  EXPECT_EQ(to_config_text(parse_run_config(text)), text);
}

TEST(RunConfigText, CommentsBlanksAndDefaults) {
  const RunConfig c = parse_run_config("# comment\n\n n_clones = 3 # trailing\nn_layers=6\nloss_mode=last_only\n");
  EXPECT_EQ(c.model.n_clones, 3);
  EXPECT_EQ(c.model.loss_mode, LossMode::last_only);
  EXPECT_EQ(c.model.topology.shortcuts, ModuleTopology::symmetric_shortcuts(6));
  EXPECT_EQ(c.train.batch_size, 128);
  EXPECT_EQ(c.data.patch, 55);
}

TEST(RunConfigText, MisspelledKeyIsNamed) {
  try {
    parse_run_config("lr_inital=1e-3\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("lr_inital"), std::string::npos);
  }
}

TEST(RunConfigText, RejectsBadValuesAndCombinations) {
  EXPECT_THROW(parse_run_config("n_clones=two\n"), ConfigError);
  EXPECT_THROW(parse_run_config("n_clones=2\nn_clones=3\n"), ConfigError);
  EXPECT_THROW(parse_run_config("just a line\n"), ConfigError);
  EXPECT_THROW(parse_run_config("transfer_mode=feature\ninput_mode=previous_only\n"), ConfigError);
  EXPECT_THROW(parse_run_config("patch=12\n"), ConfigError);
  EXPECT_THROW(parse_run_config("wall_time=yes\n"), ConfigError);
  EXPECT_EQ(parse_run_config("n_layers=10\nshortcuts=none\n").model.topology.shortcuts.size(), 0u);
  EXPECT_EQ(parse_run_config("n_layers=10\nshortcuts=2:3\n").model.topology.shortcuts, (std::vector<Shortcut>{{2, 3}}));
}

std::vector<ImagePair<float>> tiny_pairs() {
  PhantomSpec spec;
  return {make_synthetic_pair<float>(spec, 2, 0), make_synthetic_pair<float>(spec, 2, 1)};
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const fs::path dir = scratch("ckpt");
  const Checkpoint ckpt = train_run(small_run_config(), tiny_pairs());
  EXPECT_EQ(ckpt.epoch, 3);
  save_checkpoint(dir / "a.ckpt", ckpt);
  const Checkpoint loaded = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(dir / "b.ckpt", loaded);
  EXPECT_EQ(read_file(dir / "a.ckpt"), read_file(dir / "b.ckpt"));
  EXPECT_EQ(loaded.config, ckpt.config);
  EXPECT_EQ(loaded.log, ckpt.log);
  EXPECT_EQ(loaded.adam->step, ckpt.adam->step);
}

TEST(Checkpoint, RoundTripPreservesDenoiseBitwise) {
  const Checkpoint ckpt = train_run(small_run_config(), tiny_pairs());
  const Checkpoint loaded = decode_checkpoint(encode_checkpoint(ckpt));
  const auto y = tiny_pairs()[1].low_dose;
  const auto a = denoise(y, ckpt.config.model, ckpt.params, true);
  const auto b = denoise(y, loaded.config.model, loaded.params, true);
  for (std::size_t t = 0; t < a.size(); ++t) EXPECT_EQ(a[t].vec(), b[t].vec());
}

TEST(Checkpoint, HeaderAndRejections) {
  Checkpoint ckpt;
  ckpt.config = small_run_config();
  ckpt.params = init_parameters<float>(ckpt.config.model, 1);
  const std::string bytes = encode_checkpoint(ckpt);
  EXPECT_EQ(bytes.substr(0, 4), "PCNC");
  EXPECT_EQ(bytes.substr(4, 4), std::string("\x01\x00\x00\x00", 4));
  EXPECT_FALSE(decode_checkpoint(bytes).adam.has_value());

  std::string bad = bytes;
  bad[1] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes + "z"), FormatError);

  // Tensor shapes are checked against the embedded config.
  Checkpoint wrong = ckpt;
  wrong.params = init_parameters<float>(CloneNetConfig::parallel(2, ModuleTopology{4, 4, {}}), 1);
  EXPECT_THROW(encode_checkpoint(wrong), ShapeError);
}

TEST(Manifest, RoundTripAndRelativePaths) {
  const fs::path dir = scratch("manifest");
  const auto pairs = tiny_pairs();
  std::vector<ManifestEntry> entries;
  for (const auto& p : pairs) {
    write_tensor_file(dir / (p.id + "_low.pcnt"), p.low_dose);
    write_tensor_file(dir / (p.id + "_normal.pcnt"), p.normal_dose);
    entries.push_back({p.id, {p.id + "_low.pcnt", p.id + "_normal.pcnt"}});
  }
  write_manifest(dir / "m.tsv", entries);
  const auto loaded = load_image_pairs<float>(dir / "m.tsv");
  ASSERT_EQ(loaded.size(), 2u);
  EXPECT_EQ(loaded[1].id, pairs[1].id);
  EXPECT_EQ(loaded[1].normal_dose.vec(), pairs[1].normal_dose.vec());

  write_file(dir / "dup.tsv", "a\tx\ty\na\tx\ty\n");
  EXPECT_THROW(read_manifest(dir / "dup.tsv"), IoError);
  write_file(dir / "short.tsv", "a\n");
  EXPECT_THROW(read_manifest(dir / "short.tsv"), IoError);
}

TEST(AblationGrid, DefaultsBlocksAndSeeds) {
  const auto arms = parse_ablation_grid(
      "n_layers=4\nn_kernels=3\npatch=11\nseeds=0,1,2\n"
      "[scn]\ntransfer_mode=image\ninput_mode=previous_only\nresidual_mode=incremental\nloss_mode=last_only\n"
      "[full]\nseeds=7\n");
  ASSERT_EQ(arms.size(), 2u);
  EXPECT_EQ(arms[0].id, "scn");
  EXPECT_EQ(arms[0].config.model.transfer_mode, TransferMode::image);
  EXPECT_EQ(arms[0].seeds, (std::vector<std::uint64_t>{0, 1, 2}));
  EXPECT_EQ(arms[1].config.model.transfer_mode, TransferMode::feature);
  EXPECT_EQ(arms[1].config.model.topology.n_kernels, 3);
  EXPECT_EQ(arms[1].seeds, (std::vector<std::uint64_t>{7}));
}

TEST(AblationGrid, ValidatesEveryBlockUpFront) {
  EXPECT_THROW(parse_ablation_grid("[a]\n[a]\n"), ConfigError);
  EXPECT_THROW(parse_ablation_grid("n_clones=2\n"), ConfigError);
  try {
    parse_ablation_grid("[ok]\n[broken]\ntransfer_mode=feature\ninput_mode=previous_only\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("[broken]"), std::string::npos);
  }
  EXPECT_THROW(parse_ablation_grid("[a]\nbogus=1\n"), ConfigError);
  EXPECT_THROW(parse_ablation_grid("[a]\nseeds=1,1\n"), ConfigError);
}

TEST(AblationRun, SummaryMatchesPerSeedEvaluation) {
  const fs::path dir = scratch("ablate");
  auto arms = parse_ablation_grid(
      "n_layers=4\nn_kernels=3\npatch=11\nstride=9\nmax_patches=16\nbatch_size=4\nepochs=2\nlr_initial=1e-3\n"
      "lr_final=1e-4\nwall_time=false\n"
      "[scn]\nn_clones=2\ntransfer_mode=image\ninput_mode=previous_only\nresidual_mode=incremental\nloss_mode=last_only\n"
      "[full]\nn_clones=3\n");
  const auto pairs = tiny_pairs();
  const auto results = run_ablation(arms, pairs, pairs, {dir, 2, {}});
  ASSERT_EQ(results.size(), 2u);
  for (const auto& id : {"scn", "full"}) {
    EXPECT_TRUE(fs::exists(dir / id / "seed0.ckpt"));
    EXPECT_TRUE(fs::exists(dir / id / "seed0.log.csv"));
  }
  const Checkpoint full = load_checkpoint(dir / "full" / "seed0.ckpt");
  const MetricsReport manual = evaluate_checkpoint(full, pairs);
  EXPECT_EQ(manual.psnr_db().mean, results[1].psnr.mean);
  EXPECT_EQ(manual.to_csv(), read_file(dir / "full" / "seed0.eval.csv"));
  EXPECT_EQ(results[1].clone_psnr.size(), 3u);
  EXPECT_NEAR(results[1].clone_psnr.back(), results[1].psnr.mean, 1e-9);

  const std::string summary = read_file(dir / "summary.csv");
  EXPECT_EQ(summary.substr(0, summary.find('\n')),
            "config_id,psnr_mean,psnr_sd,ssim_mean,ssim_sd,rmse_mean,rmse_sd,psnr_clone1,psnr_clone2,psnr_clone3");
  EXPECT_NE(summary.find("\nscn,"), std::string::npos);
  // scn has two clones, so its last cell is empty
  const auto scn_line = summary.substr(summary.find("\nscn,") + 1);
  EXPECT_EQ(scn_line.substr(0, scn_line.find('\n')).back(), ',');
}

}  // namespace
