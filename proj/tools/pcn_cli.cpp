// pcn: command-line front end for data generation, training, inference,
// evaluation and ablation grids.

#include "pcn/ablation.hpp"
#include "pcn/io.hpp"
#include "pcn/metrics.hpp"
#include "pcn/text.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>

namespace fs = std::filesystem;
using namespace pcn;

namespace {

struct GenDataArgs {
  fs::path out;
  int n_images = 16;
  Index size = 64;
  double sigma = 0.05;
  std::uint64_t seed = 0;
};

int gen_data(const GenDataArgs& a) {
  if (a.n_images < 1) throw ConfigError("--n-images must be at least 1");
  PhantomSpec spec;
  spec.height = spec.width = a.size;
  spec.noise_sigma = a.sigma;
  spec.validate();
  fs::create_directories(a.out);
  std::vector<ManifestEntry> manifest;
  for (int i = 0; i < a.n_images; ++i) {
    const ImagePair<float> p = make_synthetic_pair<float>(spec, a.seed, i);
    const std::string low = p.id + "_low.pcnt", normal = p.id + "_normal.pcnt";
    write_tensor_file(a.out / low, p.low_dose);
    write_tensor_file(a.out / normal, p.normal_dose);
    manifest.push_back({p.id, {low, normal}});
  }
  write_manifest(a.out / "manifest.tsv", manifest);
  std::cout << "wrote " << a.n_images << " image pairs and " << (a.out / "manifest.tsv").string() << "\n";
  return 0;
}

struct TrainArgs {
  fs::path config;
  fs::path data;
  fs::path out;
  fs::path resume;
  fs::path log;
  std::optional<int> stop_after;
};

int train_cmd(const TrainArgs& a) {
  const RunConfig config = parse_run_config(read_file(a.config));
  const auto pairs = load_image_pairs<float>(a.data);
  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) resume = load_checkpoint(a.resume);
  const fs::path log_path = a.log.empty() ? fs::path(a.out).concat(".log.csv") : a.log;
  const Checkpoint ckpt = train_run(config, pairs, std::move(resume), a.stop_after, [](const Checkpoint& c) {
    const EpochRecord& r = c.log.rows.back();
    std::cout << "epoch " << r.epoch << " lr " << format_double(r.lr) << " train_rmse " << format_double(r.train_rmse)
              << "\n";
  });
  save_checkpoint(a.out, ckpt);
  write_file(log_path, ckpt.log.to_csv());
  std::cout << "wrote " << a.out.string() << " (epoch " << ckpt.epoch << ") and " << log_path.string() << "\n";
  return 0;
}

struct DenoiseArgs {
  fs::path ckpt;
  fs::path in;
  fs::path out;
  bool all_clones = false;
};

int denoise_cmd(const DenoiseArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const Grid4<float> y = read_tensor_file<float>(a.in);
  const auto outputs = denoise(y, ckpt.config.model, ckpt.params, a.all_clones);
  if (!a.all_clones) {
    write_tensor_file(a.out, outputs.back());
    return 0;
  }
  for (std::size_t t = 0; t < outputs.size(); ++t) {
    fs::path p = a.out;
    p.replace_filename(a.out.stem().string() + "_clone" + std::to_string(t + 1) + a.out.extension().string());
    write_tensor_file(p, outputs[t]);
  }
  return 0;
}

struct EvalArgs {
  fs::path pred;
  fs::path ref;
  fs::path out;
};

int eval_cmd(const EvalArgs& a) {
  std::map<std::string, fs::path> refs;
  for (const auto& e : read_manifest(a.ref)) refs[e.id] = e.paths.back();
  MetricsReport report;
  for (const auto& e : read_manifest(a.pred)) {
    const auto it = refs.find(e.id);
    if (it == refs.end()) throw IoError(a.ref.string() + ": no entry for id '" + e.id + "'");
    const Grid4<float> z = read_tensor_file<float>(e.paths.back());
    const Grid4<float> x = read_tensor_file<float>(it->second);
    const double r = rmse(z, x);
    report.images.push_back({e.id, r, psnr_from_rmse(r), ssim(z, x)});
  }
  if (report.images.empty()) throw IoError(a.pred.string() + ": no entries");
  write_file(a.out, report.to_csv());
  const MeanSd p = report.psnr_db();
  std::cout << "psnr " << format_double(p.mean) << " +- " << format_double(p.sd) << " dB over "
            << report.images.size() << " images\n";
  return 0;
}

struct AblateArgs {
  fs::path grid;
  fs::path data;
  fs::path test;
  fs::path out;
  int jobs = 1;
};

int ablate_cmd(const AblateArgs& a) {
  const auto arms = parse_ablation_grid(read_file(a.grid));
  const auto train = load_image_pairs<float>(a.data);
  const auto eval = a.test.empty() ? train : load_image_pairs<float>(a.test);
  AblationOptions options{a.out, a.jobs, [](const std::string& s) { std::cout << s << std::endl; }};
  run_ablation(arms, train, eval, options);
  std::cout << "wrote " << (a.out / "summary.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parallel-clone denoising networks: data, training, inference and ablations"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write synthetic phantom pairs and a manifest");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--n-images", gen.n_images, "Number of image pairs")->capture_default_str();
  gen_cmd->add_option("--size", gen.size, "Image side in pixels")->capture_default_str();
  gen_cmd->add_option("--sigma", gen.sigma, "Noise standard deviation")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Random seed")->capture_default_str();

  TrainArgs tr;
  auto* train_sub = app.add_subcommand("train", "Train a model from a key=value config");
  train_sub->add_option("--config", tr.config, "Run config file")->required()->check(CLI::ExistingFile);
  train_sub->add_option("--data", tr.data, "Training manifest")->required()->check(CLI::ExistingFile);
  train_sub->add_option("--out", tr.out, "Output checkpoint")->required();
  train_sub->add_option("--resume", tr.resume, "Continue from this checkpoint")->check(CLI::ExistingFile);
  train_sub->add_option("--log", tr.log, "Convergence CSV (default: <out>.log.csv)");
  train_sub->add_option("--stop-after-epoch", tr.stop_after, "Stop once this many epochs are done");

  DenoiseArgs dn;
  auto* denoise_sub = app.add_subcommand("denoise", "Apply a checkpoint to a tensor file");
  denoise_sub->add_option("--ckpt", dn.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  denoise_sub->add_option("--in", dn.in, "Input tensor file")->required()->check(CLI::ExistingFile);
  denoise_sub->add_option("--out", dn.out, "Output tensor file")->required();
  denoise_sub->add_flag("--all-clones", dn.all_clones, "Write every clone output as <out>_cloneN");

  EvalArgs ev;
  auto* eval_sub = app.add_subcommand("eval", "Per-image RMSE/PSNR/SSIM report");
  eval_sub->add_option("--pred", ev.pred, "Manifest of predictions (last column)")->required()->check(CLI::ExistingFile);
  eval_sub->add_option("--ref", ev.ref, "Manifest of references (last column)")->required()->check(CLI::ExistingFile);
  eval_sub->add_option("--out", ev.out, "Report CSV")->required();

  AblateArgs ab;
  auto* ablate_sub = app.add_subcommand("ablate", "Train and evaluate every configuration of a grid");
  ablate_sub->add_option("--grid", ab.grid, "Grid file")->required()->check(CLI::ExistingFile);
  ablate_sub->add_option("--data", ab.data, "Training manifest")->required()->check(CLI::ExistingFile);
  ablate_sub->add_option("--test", ab.test, "Evaluation manifest (default: training images)")->check(CLI::ExistingFile);
  ablate_sub->add_option("--out", ab.out, "Output directory")->required();
  ablate_sub->add_option("--jobs", ab.jobs, "Concurrent training jobs")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*gen_cmd) return gen_data(gen);
    if (*train_sub) return train_cmd(tr);
    if (*denoise_sub) return denoise_cmd(dn);
    if (*eval_sub) return eval_cmd(ev);
    if (*ablate_sub) return ablate_cmd(ab);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "error: " << msg << "\n";
    return 1;
  }
  return 1;
}
