// Copyright 2026 The redi-toy Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// redi: fit the semantic projector, train, sample and evaluate on the toy
// world. Exit codes follow redi::ExitCode.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "redi/run.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace redi;

namespace {

constexpr const char* kMetricsHeader = "step,loss,loss_x,loss_z,fgd,coherence\n";

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

RunConfig load_with_overrides(const std::string& path, const std::vector<std::string>& sets) {
  RunConfig cfg = load_config(path);
  std::string extra;
  for (const auto& s : sets) extra += s + "\n";
  return extra.empty() ? cfg : parse_config(extra, cfg, "--set");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string checkpoint_name(std::size_t step) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "step-%08zu.ckpt", step);
  return buf;
}

std::string metrics_row(std::size_t step, const StepResult* r, const MetricReport* m) {
  std::string row = std::to_string(step);
  row += "," + (r ? fmt(r->loss) : "") + "," + (r ? fmt(r->loss_x) : "") + "," + (r ? fmt(r->loss_z) : "");
  row += "," + (m ? fmt(m->fgd_x) : "") + "," + (m ? fmt(m->coherence_err) : "") + "\n";
  return row;
}

json report_json(const MetricReport& m) {
  return {{"fgd_x", m.fgd_x},           {"fgd_joint", m.fgd_joint}, {"sliced_w2", m.sliced_w2},
          {"coherence_err", m.coherence_err}, {"sample_count", m.sample_count}, {"regularized", m.regularized}};
}

json guidance_json(const GuidanceConfig& g) {
  const char* cfg_names[] = {"off", "vae-only", "both"};
  return {{"cfg_mode", cfg_names[int(g.cfg_mode)]},
          {"cfg_weight", g.cfg_weight},
          {"rg", g.rg_enabled},
          {"rg_weight", g.rg_weight},
          {"steps", g.steps},
          {"diffusion_scale", g.diffusion_scale},
          {"order", g.order == GuidanceOrder::CfgThenRg ? "cfg-then-rg" : "rg-then-cfg"}};
}

// ---- pca-fit --------------------------------------------------------------

struct PcaFitOpts {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
};

int cmd_pca_fit(const PcaFitOpts& o) {
  const RunConfig cfg = load_with_overrides(o.config, o.sets);
  const PcaFit fit = fit_projector(cfg);
  const fs::path out = o.out.empty() ? fs::path(cfg.out_dir) / "projector.pca" : fs::path(o.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  atomic_write(out.string(), encode_projector_file(fit.projector));
  std::printf("component  eigenvalue  explained  cumulative\n");
  double total = 0.0;
  for (double v : fit.spectrum) total += v;
  double cum = 0.0;
  for (std::size_t i = 0; i < fit.projector.rank(); ++i) {
    cum += fit.spectrum[i];
    std::printf("%9zu  %10.6g  %9.6f  %10.6f\n", i + 1, fit.spectrum[i], fit.spectrum[i] / total, cum / total);
  }
  std::printf("wrote %s (rank %zu of %zu)\n", out.string().c_str(), fit.projector.rank(), fit.projector.full_dim());
  return 0;
}

// ---- train ----------------------------------------------------------------

struct TrainOpts {
  std::string config;
  std::vector<std::string> sets;
  std::string run_dir;
  std::string projector;
  std::optional<std::size_t> steps;
  bool fit_pca = false;
  bool resume = false;
};

// Keeps the header and the rows up to `step`, so a resumed run appends
// exactly what an uninterrupted run would have written.
void truncate_metrics(const fs::path& path, std::size_t step) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line, kept;
  std::getline(in, line);
  kept = line + "\n";
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (std::stoull(line.substr(0, line.find(','))) > step) break;
    kept += line + "\n";
  }
  atomic_write(path.string(), kept);
}

int cmd_train(const TrainOpts& o) {
  RunConfig cfg;
  PcaProjector projector;
  JointDenoiser model;
  fs::path dir;

  if (o.resume) {
    if (o.run_dir.empty() && o.config.empty()) throw ConfigError("train --resume needs --run-dir or --config");
    dir = o.run_dir.empty() ? fs::path(load_with_overrides(o.config, o.sets).out_dir) : fs::path(o.run_dir);
    const Checkpoint ck = load_checkpoint((dir / "latest.ckpt").string());
    cfg = ck.config;
    projector = ck.projector;
    model = model_from_checkpoint(ck);
    if (o.steps) cfg.train.total_steps = *o.steps;
    truncate_metrics(dir / "metrics.csv", ck.step);
    std::printf("resuming %s at step %llu\n", dir.string().c_str(), static_cast<unsigned long long>(ck.step));
  } else {
    if (o.config.empty()) throw ConfigError("train needs --config");
    cfg = load_with_overrides(o.config, o.sets);
    if (o.steps) cfg.train.total_steps = *o.steps;
    dir = o.run_dir.empty() ? fs::path(cfg.out_dir) : fs::path(o.run_dir);
    cfg.out_dir = dir.string();
    ensure_dir(dir);
    if (o.fit_pca) {
      projector = fit_projector(cfg).projector;
      atomic_write((dir / "projector.pca").string(), encode_projector_file(projector));
    } else {
      const fs::path p = o.projector.empty() ? dir / "projector.pca" : fs::path(o.projector);
      if (!fs::exists(p)) throw IoError("projector not found: " + p.string() + " (run `redi pca-fit` or pass --fit-pca)");
      projector = decode_projector_file(read_file(p.string()), p.string());
    }
    model = init_model(cfg);
    atomic_write((dir / "metrics.csv").string(), kMetricsHeader);
  }
  cfg.validate();
  atomic_write((dir / "config.toml").string(), serialize_config(cfg));

  const ToySpec spec = make_spec(cfg, projector);
  auto save = [&](const JointDenoiser& m) {
    Checkpoint ck = make_checkpoint(cfg, m, projector);
    const std::string bytes = encode_checkpoint(ck);
    atomic_write((dir / checkpoint_name(ck.step)).string(), bytes);
    atomic_write((dir / "latest.ckpt").string(), bytes);
  };
  if (!o.resume) save(model);

  std::ofstream metrics(dir / "metrics.csv", std::ios::app | std::ios::binary);
  if (!metrics) throw IoError("cannot append to " + (dir / "metrics.csv").string());
  TrainHooks hooks;
  hooks.checkpoint_every = cfg.checkpoint_every;
  hooks.on_step = [&](std::size_t step, const StepResult& r, const JointDenoiser& m) {
    std::optional<MetricReport> rep;
    if (cfg.eval_every > 0 && step % cfg.eval_every == 0) rep = periodic_eval(cfg, spec, m);
    metrics << metrics_row(step, &r, rep ? &*rep : nullptr) << std::flush;
    if (step % 100 == 0 || step == cfg.train.total_steps)
      std::printf("step %zu loss %.5f (x %.5f z %.5f)%s\n", step, r.loss, r.loss_x, r.loss_z,
                  rep ? (" fgd_x " + fmt(rep->fgd_x)).c_str() : "");
  };
  hooks.on_checkpoint = [&](std::size_t, const JointDenoiser& m) { save(m); };

  const std::size_t start = model.params().step();
  train_loop(spec, model, train_config(cfg), cfg.process(), hooks);
  const std::size_t end = model.params().step();
  if (end != start && (cfg.checkpoint_every == 0 || end % cfg.checkpoint_every != 0)) save(model);
  std::printf("run %s at step %zu\n", dir.string().c_str(), end);
  return 0;
}

// ---- sample ---------------------------------------------------------------

struct SampleOpts {
  std::string checkpoint;
  std::string out;
  std::optional<std::size_t> count, steps, label;
  std::optional<std::uint64_t> seed;
  std::optional<CfgMode> cfg_mode;
  std::optional<double> w, wr;
  std::optional<bool> rg;
};

int cmd_sample(const SampleOpts& o) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const RunConfig& cfg = ck.config;
  const JointDenoiser model = model_from_checkpoint(ck);

  SampleRequest req = sample_request(cfg, o.count.value_or(cfg.sample_count), o.seed.value_or(cfg.seed));
  if (o.cfg_mode) req.guidance.cfg_mode = *o.cfg_mode;
  if (o.w) req.guidance.cfg_weight = *o.w;
  if (o.rg) req.guidance.rg_enabled = *o.rg;
  if (o.wr) req.guidance.rg_weight = *o.wr;
  if (o.steps) req.guidance.steps = *o.steps;
  if (o.label) {
    req.label_mode = LabelMode::Fixed;
    req.class_label = *o.label;
  }
  try {
    req.guidance.validate();
    if (req.label_mode == LabelMode::Fixed && req.class_label >= cfg.toy.num_classes)
      throw ContractViolation("--label must be below num_classes");
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("sample: ") + e.what());
  }

  const SampleResult res = sample(model, req, cfg.process());
  for (const auto& w : res.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());

  const fs::path out = o.out.empty() ? fs::path(o.checkpoint).parent_path() / "samples.bin" : fs::path(o.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  atomic_write(out.string(), encode_dump(res.x, res.z));
  const char* modes[] = {"fixed", "random", "unconditional"};
  json manifest = {{"dump_version", kDumpVersion},
                   {"seed", req.seed},
                   {"count", req.count},
                   {"label_mode", modes[int(req.label_mode)]},
                   {"guidance", guidance_json(req.guidance)},
                   {"config_hash", config_hash(cfg)},
                   {"checkpoint_hash", ck.hash_hex()},
                   {"checkpoint_step", ck.step},
                   {"x_shape", res.x.shape()},
                   {"z_shape", res.z.shape()},
                   {"labels", res.labels},
                   {"warnings", res.warnings}};
  if (req.label_mode == LabelMode::Fixed) manifest["class_label"] = req.class_label;
  atomic_write(out.string() + ".json", manifest.dump(2) + "\n");
  std::printf("wrote %zu samples to %s\n", req.count, out.string().c_str());
  return 0;
}

// ---- eval -----------------------------------------------------------------

struct EvalOpts {
  std::string checkpoint;
  std::string dump;
  bool real = false;
  std::string out;
};

int cmd_eval(const EvalOpts& o) {
  if (o.dump.empty() == !o.real) throw ConfigError("eval needs exactly one of --dump or --real");
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const RunConfig& cfg = ck.config;
  const ToySpec spec = make_spec(cfg, ck.projector);

  Tensor x, z;
  std::string source;
  if (o.real) {
    Rng rng = Rng(cfg.eval_seed).fork(1);
    PairBatch b = generate_pairs(spec, cfg.eval_reference, rng);
    x = std::move(b.x0);
    z = std::move(b.z0);
    source = "real";
  } else {
    SampleDump d = decode_dump(read_file(o.dump), o.dump);
    x = std::move(d.x);
    z = std::move(d.z);
    source = o.dump;
  }
  if (x.rank() != 3 || x.dim(1) != cfg.toy.token_count || x.dim(2) != cfg.toy.x_channels || z.rank() != 3 ||
      z.dim(0) != x.dim(0) || z.dim(2) != cfg.pca_rank)
    throw IoError("eval: samples do not match the checkpoint's shapes");
  const std::size_t need = cfg.toy.token_count * (cfg.toy.x_channels + cfg.pca_rank) + 1;
  if (x.dim(0) < need)
    throw InsufficientData("eval: " + std::to_string(x.dim(0)) + " samples given, at least " + std::to_string(need) +
                           " required for the joint Frechet distance");

  const MetricReport rep = evaluate_samples(x, z, spec, cfg.eval_options());
  const fs::path out = !o.out.empty() ? fs::path(o.out)
                       : o.real        ? fs::path(o.checkpoint).parent_path() / "eval-real.json"
                                       : fs::path(o.dump + ".eval.json");
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  json j = report_json(rep);
  j["source"] = source;
  j["checkpoint_hash"] = ck.hash_hex();
  j["checkpoint_step"] = ck.step;
  j["config_hash"] = config_hash(cfg);
  j["seed"] = cfg.seed;
  j["eval_seed"] = cfg.eval_seed;
  atomic_write(out.string(), j.dump(2) + "\n");
  fs::path csv = out;
  csv.replace_extension(".csv");
  atomic_write(csv.string(), std::string(kMetricsHeader) + metrics_row(ck.step, nullptr, &rep));
  std::printf("fgd_x %s fgd_joint %s sliced_w2 %s coherence %s n %zu%s\n", fmt(rep.fgd_x).c_str(),
              fmt(rep.fgd_joint).c_str(), fmt(rep.sliced_w2).c_str(), fmt(rep.coherence_err).c_str(),
              rep.sample_count, rep.regularized ? " (covariance regularized)" : "");
  return 0;
}

// ---- ablate ---------------------------------------------------------------

struct AblateOpts {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::string ranks = "1,2,4,full";
  std::optional<std::size_t> steps;
};

int cmd_ablate(const AblateOpts& o) {
  RunConfig base = load_with_overrides(o.config, o.sets);
  if (o.steps) base.train.total_steps = *o.steps;
  const fs::path out = o.out.empty() ? fs::path(base.out_dir) / "ablate.csv" : fs::path(o.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path());

  std::vector<std::size_t> ranks;
  std::stringstream ss(o.ranks);
  for (std::string tok; std::getline(ss, tok, ',');) {
    if (tok == "full") {
      ranks.push_back(base.toy.z_full_channels);
      continue;
    }
    std::size_t r = 0;
    try {
      r = std::stoul(tok);
    } catch (const std::exception&) {
      throw ConfigError("ablate: bad rank `" + tok + "`");
    }
    ranks.push_back(r);
  }

  // Sweeps are scored without guidance.
  GuidanceConfig plain = base.guidance;
  plain.cfg_mode = CfgMode::Off;
  plain.rg_enabled = false;

  std::string csv = "study,variant,fusion,pca_rank,tokens,step_ms,fgd_x,fgd_joint,sliced_w2,coherence\n";
  auto run = [&](const std::string& study, const std::string& variant, const RunConfig& cfg) {
    std::printf("[%s] %s: training %zu steps\n", study.c_str(), variant.c_str(), cfg.train.total_steps);
    std::fflush(stdout);
    const TrainedRun tr = train_in_memory(cfg);
    const MetricReport m = sample_and_score(tr, plain, cfg.sample_count, cfg.seed);
    const DenoiserConfig dc = cfg.denoiser();
    csv += study + "," + variant + "," + (dc.fusion == FusionMode::Merged ? "merged" : "separate") + "," +
           std::to_string(cfg.pca_rank) + "," + std::to_string(dc.sequence_length()) + "," +
           fmt(1e3 * tr.seconds_per_step) + "," + fmt(m.fgd_x) + "," + fmt(m.fgd_joint) + "," + fmt(m.sliced_w2) +
           "," + fmt(m.coherence_err) + "\n";
    std::printf("[%s] %s: fgd_x %s coherence %s step %s ms\n", study.c_str(), variant.c_str(), fmt(m.fgd_x).c_str(),
                fmt(m.coherence_err).c_str(), fmt(1e3 * tr.seconds_per_step).c_str());
    atomic_write(out.string(), csv);
  };

  run("baseline", "latent-only", latent_only(base));
  for (std::size_t r : ranks) {
    RunConfig c = base;
    c.pca_rank = r;
    c.fusion = FusionMode::Merged;
    c.validate();
    run("pca_rank", "rank-" + std::to_string(r), c);
  }
  for (FusionMode f : {FusionMode::Merged, FusionMode::Separate}) {
    RunConfig c = base;
    c.fusion = f;
    run("fusion", f == FusionMode::Merged ? "merged" : "separate", c);
  }
  std::printf("wrote %s\n", out.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint latent/semantic diffusion on a synthetic toy world"};
  app.require_subcommand(1);

  PcaFitOpts pf;
  auto* pca = app.add_subcommand("pca-fit", "Fit the semantic PCA projector and print explained variance");
  pca->add_option("-c,--config", pf.config, "Config file")->required();
  pca->add_option("--set", pf.sets, "Override a config entry, `key=value`");
  pca->add_option("-o,--out", pf.out, "Projector path (default <out_dir>/projector.pca)");

  TrainOpts tr;
  auto* train = app.add_subcommand("train", "Train a model into a run directory");
  train->add_option("-c,--config", tr.config, "Config file");
  train->add_option("--set", tr.sets, "Override a config entry, `key=value`");
  train->add_option("--run-dir", tr.run_dir, "Run directory (default: out_dir from the config)");
  train->add_option("--projector", tr.projector, "Projector file (default <run-dir>/projector.pca)");
  train->add_option("--steps", tr.steps, "Total training steps");
  train->add_flag("--fit-pca", tr.fit_pca, "Fit the projector before training");
  train->add_flag("--resume", tr.resume, "Continue from <run-dir>/latest.ckpt");

  SampleOpts so;
  const std::map<std::string, CfgMode> cfg_modes{{"off", CfgMode::Off}, {"vae-only", CfgMode::VaeOnly}, {"both", CfgMode::Both}};
  const std::map<std::string, bool> on_off{{"on", true}, {"off", false}};
  auto* smp = app.add_subcommand("sample", "Sample a checkpoint into a binary dump plus JSON manifest");
  smp->add_option("--checkpoint", so.checkpoint, "Checkpoint file")->required();
  smp->add_option("-o,--out", so.out, "Dump path (default <checkpoint dir>/samples.bin)");
  smp->add_option("-n,--count", so.count, "Number of samples");
  smp->add_option("--seed", so.seed, "Sampling seed");
  smp->add_option("--steps", so.steps, "Sampling steps");
  smp->add_option("--label", so.label, "Sample one fixed class");
  smp->add_option("--cfg", so.cfg_mode, "Classifier-free guidance: off, vae-only, both")
      ->transform(CLI::CheckedTransformer(cfg_modes, CLI::ignore_case));
  smp->add_option("-w,--cfg-weight", so.w, "Classifier-free guidance weight");
  smp->add_option("--rg", so.rg, "Representation guidance: on, off")
      ->transform(CLI::CheckedTransformer(on_off, CLI::ignore_case));
  smp->add_option("--wr", so.wr, "Representation guidance weight");

  EvalOpts eo;
  auto* ev = app.add_subcommand("eval", "Score a sample dump (or real data) against fresh toy-world data");
  ev->add_option("--checkpoint", eo.checkpoint, "Checkpoint providing config and projector")->required();
  ev->add_option("--dump", eo.dump, "Sample dump");
  ev->add_flag("--real", eo.real, "Score real pairs drawn with the evaluation seed");
  ev->add_option("-o,--out", eo.out, "Report JSON path; the CSV row goes next to it");

  AblateOpts ao;
  auto* abl = app.add_subcommand("ablate", "PCA-rank and fusion-mode sweeps into one CSV");
  abl->add_option("-c,--config", ao.config, "Config file")->required();
  abl->add_option("--set", ao.sets, "Override a config entry, `key=value`");
  abl->add_option("-o,--out", ao.out, "CSV path (default <out_dir>/ablate.csv)");
  abl->add_option("--ranks", ao.ranks, "Comma-separated ranks, `full` for all channels");
  abl->add_option("--steps", ao.steps, "Training steps per variant");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return int(ExitCode::kConfig);
  }

  try {
    if (*pca) return cmd_pca_fit(pf);
    if (*train) return cmd_train(tr);
    if (*smp) return cmd_sample(so);
    if (*ev) return cmd_eval(eo);
    if (*abl) return cmd_ablate(ao);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return int(e.code());
  } catch (const ContractViolation& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return int(ExitCode::kConfig);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return int(ExitCode::kIo);
  }
  return 0;
}
