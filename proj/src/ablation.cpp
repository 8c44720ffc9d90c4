#include "pcn/ablation.hpp"

#include "pcn/text.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

namespace pcn {
namespace fs = std::filesystem;

Checkpoint train_run(const RunConfig& config, const std::vector<ImagePair<float>>& pairs,
                     std::optional<Checkpoint> resume, std::optional<int> stop_after,
                     const std::function<void(const Checkpoint&)>& on_epoch) {
  const PatchDataset<float> data =
      build_patch_dataset(pairs, config.data.patch, config.data.stride, config.data.max_patches);

  TrainState<float> state;
  if (resume) {
    if (!(resume->config == config)) {
      throw ConfigError("resume checkpoint was written with a different configuration:\n" +
                        to_config_text(resume->config));
    }
    if (!resume->adam) throw ConfigError("resume checkpoint has no optimizer state");
    state = {std::move(resume->params), std::move(*resume->adam), resume->epoch, std::move(resume->log)};
  } else {
    state = TrainState<float>::start(init_parameters<float>(config.model, config.train.seed));
  }

  auto snapshot = [&config](const TrainState<float>& s) {
    return Checkpoint{config, s.params, s.adam, s.epochs_done, s.log};
  };
  EpochCallback<float> callback;
  if (on_epoch) callback = [&](const TrainState<float>& s) { on_epoch(snapshot(s)); };
  state = train(config.model, std::move(state), data, config.train, stop_after, callback);
  return snapshot(state);
}

MetricsReport evaluate_checkpoint(const Checkpoint& ckpt, const std::vector<ImagePair<float>>& pairs) {
  MetricsReport report;
  for (const auto& p : pairs) {
    const Grid4<float> x = denoise(p.low_dose, ckpt.config.model, ckpt.params).back();
    const double e = rmse(x, p.normal_dose);
    report.images.push_back({p.id, e, psnr_from_rmse(e), ssim(x, p.normal_dose)});
  }
  return report;
}

namespace {

struct GridBlock {
  std::string id;
  int line = 0;
  std::vector<std::pair<std::string, std::string>> entries;
};

std::vector<std::uint64_t> parse_seeds(std::string_view v) {
  std::vector<std::uint64_t> seeds;
  while (true) {
    const auto comma = v.find(',');
    seeds.push_back(parse_int<std::uint64_t>(trim(v.substr(0, comma)), "seeds"));
    if (comma == std::string_view::npos) break;
    v = v.substr(comma + 1);
  }
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds: duplicate seed");
  }
  return seeds;
}

}  // namespace

std::vector<AblationArm> parse_ablation_grid(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> defaults;
  std::vector<GridBlock> blocks;
  int line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "grid line " + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ConfigError(where + ": malformed header '" + std::string(line) + "'");
      const std::string id(trim(line.substr(1, line.size() - 2)));
      if (id.empty() || id.find_first_of(",/\\ \t") != std::string::npos) {
        throw ConfigError(where + ": config id '" + id + "' must be non-empty without commas, slashes or spaces");
      }
      for (const auto& b : blocks) {
        if (b.id == id) throw ConfigError(where + ": duplicate config id '" + id + "' (first on line " + std::to_string(b.line) + ")");
      }
      blocks.push_back({id, line_no, {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key=value or [id]");
    auto& target = blocks.empty() ? defaults : blocks.back().entries;
    target.emplace_back(std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))));
  }
  if (blocks.empty()) throw ConfigError("ablation grid has no [config_id] blocks");

  std::vector<AblationArm> arms;
  for (const auto& block : blocks) {
    std::vector<std::pair<std::string, std::string>> merged = defaults;
    std::set<std::string> own;
    for (const auto& [k, v] : block.entries) {
      if (!own.insert(k).second) throw ConfigError("[" + block.id + "]: duplicate key '" + k + "'");
      bool replaced = false;
      for (auto& d : merged) {
        if (d.first == k) {
          d.second = v;
          replaced = true;
        }
      }
      if (!replaced) merged.emplace_back(k, v);
    }
    AblationArm arm{block.id, {}, {}};
    std::vector<std::pair<std::string, std::string>> config_lines;
    std::optional<std::string> seeds;
    for (auto& [k, v] : merged) {
      if (k == "seeds") seeds = v;
      else config_lines.emplace_back(k, v);
    }
    try {
      apply_config_lines(arm.config, config_lines);
      arm.seeds = seeds ? parse_seeds(*seeds) : std::vector<std::uint64_t>{arm.config.train.seed};
    } catch (const std::invalid_argument& e) {
      throw ConfigError("[" + block.id + "]: " + e.what());
    }
    arms.push_back(std::move(arm));
  }
  return arms;
}

std::vector<ArmResult> run_ablation(const std::vector<AblationArm>& arms, const std::vector<ImagePair<float>>& train,
                                    const std::vector<ImagePair<float>>& eval, const AblationOptions& options) {
  if (options.jobs < 1) throw ConfigError("jobs must be at least 1");
  for (const auto& arm : arms) {
    const Index n = build_patch_dataset(train, arm.config.data.patch, arm.config.data.stride, arm.config.data.max_patches).size();
    if (n < arm.config.train.batch_size) {
      throw ConfigError("[" + arm.id + "]: batch_size " + std::to_string(arm.config.train.batch_size) + " exceeds the " +
                        std::to_string(n) + " training patches");
    }
    for (const auto& p : eval) {
      if (p.low_dose.shape().h < arm.config.model.min_image_size() || p.low_dose.shape().w < arm.config.model.min_image_size()) {
        throw ConfigError("[" + arm.id + "]: evaluation image '" + p.id + "' is smaller than the minimum size " +
                          std::to_string(arm.config.model.min_image_size()));
      }
    }
  }

  std::vector<ArmResult> results(arms.size());
  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  for (std::size_t a = 0; a < arms.size(); ++a) {
    results[a].id = arms[a].id;
    results[a].seeds = arms[a].seeds;
    results[a].logs.resize(arms[a].seeds.size());
    results[a].reports.resize(arms[a].seeds.size());
    fs::create_directories(options.out_dir / arms[a].id);
    for (std::size_t s = 0; s < arms[a].seeds.size(); ++s) jobs.emplace_back(a, s);
  }
  // Per-job clone PSNR sums, indexed like jobs.
  std::vector<std::vector<double>> clone_sums(jobs.size());

  std::mutex lock;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  auto say = [&](const std::string& msg) {
    if (!options.progress) return;
    std::lock_guard<std::mutex> g(lock);
    options.progress(msg);
  };
  auto worker = [&] {
    while (true) {
      const std::size_t j = next++;
      if (j >= jobs.size()) return;
      {
        std::lock_guard<std::mutex> g(lock);
        if (failure) return;
      }
      try {
        const auto [a, s] = jobs[j];
        const AblationArm& arm = arms[a];
        RunConfig config = arm.config;
        config.train.seed = arm.seeds[s];
        const std::string tag = arm.id + " seed " + std::to_string(config.train.seed);
        say(tag + ": training");
        const Checkpoint ckpt = train_run(config, train);
        const fs::path stem = options.out_dir / arm.id / ("seed" + std::to_string(config.train.seed));
        save_checkpoint(fs::path(stem).concat(".ckpt"), ckpt);
        write_file(fs::path(stem).concat(".log.csv"), ckpt.log.to_csv());

        MetricsReport report = evaluate_checkpoint(ckpt, eval);
        write_file(fs::path(stem).concat(".eval.csv"), report.to_csv());
        std::vector<double> sums(static_cast<std::size_t>(config.model.n_clones), 0.0);
        for (const auto& p : eval) {
          const auto outs = denoise(p.low_dose, config.model, ckpt.params, true);
          for (std::size_t t = 0; t < outs.size(); ++t) sums[t] += psnr(outs[t], p.normal_dose);
        }
        results[a].logs[s] = ckpt.log;
        results[a].reports[s] = std::move(report);
        clone_sums[j] = std::move(sums);
        say(tag + ": done, final train_rmse " + format_double(ckpt.log.rows.back().train_rmse));
      } catch (...) {
        std::lock_guard<std::mutex> g(lock);
        if (!failure) failure = std::current_exception();
      }
    }
  };

  const int n_threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(options.jobs), jobs.size()));
  std::vector<std::thread> threads;
  for (int i = 1; i < n_threads; ++i) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);

  for (std::size_t j = 0; j < jobs.size(); ++j) {
    ArmResult& r = results[jobs[j].first];
    if (r.clone_psnr.empty()) r.clone_psnr.assign(clone_sums[j].size(), 0.0);
    for (std::size_t t = 0; t < clone_sums[j].size(); ++t) r.clone_psnr[t] += clone_sums[j][t];
  }
  for (ArmResult& r : results) {
    std::vector<double> p, s, e;
    for (const auto& rep : r.reports) {
      for (const auto& m : rep.images) {
        p.push_back(m.psnr_db);
        s.push_back(m.ssim);
        e.push_back(m.rmse);
      }
    }
    r.psnr = mean_sd(p);
    r.ssim = mean_sd(s);
    r.rmse = mean_sd(e);
    for (double& v : r.clone_psnr) v /= static_cast<double>(r.seeds.size() * eval.size());
  }
  write_file(options.out_dir / "summary.csv", ablation_summary_csv(results));
  return results;
}

std::string ablation_summary_csv(const std::vector<ArmResult>& results) {
  std::size_t k = 0;
  for (const auto& r : results) k = std::max(k, r.clone_psnr.size());
  std::string out = "config_id,psnr_mean,psnr_sd,ssim_mean,ssim_sd,rmse_mean,rmse_sd";
  for (std::size_t t = 1; t <= k; ++t) out += ",psnr_clone" + std::to_string(t);
  out += "\n";
  for (const auto& r : results) {
    out += r.id;
    for (double v : {r.psnr.mean, r.psnr.sd, r.ssim.mean, r.ssim.sd, r.rmse.mean, r.rmse.sd}) out += "," + format_double(v);
    for (std::size_t t = 0; t < k; ++t) out += "," + (t < r.clone_psnr.size() ? format_double(r.clone_psnr[t]) : "");
    out += "\n";
  }
  return out;
}

}  // namespace pcn
