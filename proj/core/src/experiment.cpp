#include "podscale/experiment.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "podscale/models.hpp"
#include "podscale/pipeline.hpp"
#include "podscale/rng.hpp"
#include "podscale/spatial.hpp"
#include "podscale/train_eval.hpp"

namespace podscale {

using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void check_keys(const json& obj, const std::string& context,
                std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw ConfigError("unknown field \"" + it.key() + "\" in " + context);
    }
  }
}

template <typename T>
T require(const json& obj, const std::string& context, const char* key) {
  if (!obj.contains(key)) {
    throw ConfigError("missing field \"" + std::string(key) + "\" in " + context);
  }
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("field \"" + std::string(key) + "\" in " + context +
                      " has the wrong type");
  }
}

template <typename T>
T get_or(const json& obj, const std::string& context, const char* key, T def) {
  if (!obj.contains(key)) return def;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("field \"" + std::string(key) + "\" in " + context +
                      " has the wrong type");
  }
}

ExperimentKind parse_kind(const std::string& s) {
  if (s == "train") return ExperimentKind::Train;
  if (s == "shard_equiv") return ExperimentKind::ShardEquiv;
  if (s == "collective_sweep") return ExperimentKind::CollectiveSweep;
  if (s == "optimizer_compare") return ExperimentKind::OptimizerCompare;
  if (s == "pipeline_study") return ExperimentKind::PipelineStudy;
  throw ConfigError("unknown experiment kind \"" + s + "\"");
}

std::string kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::Train: return "train";
    case ExperimentKind::ShardEquiv: return "shard_equiv";
    case ExperimentKind::CollectiveSweep: return "collective_sweep";
    case ExperimentKind::OptimizerCompare: return "optimizer_compare";
    case ExperimentKind::PipelineStudy: return "pipeline_study";
  }
  return "?";
}

OptimizerConfig parse_optimizer(const json& o) {
  check_keys(o, "optimizer", {"preset", "kind", "lr", "beta1", "beta2",
                              "epsilon", "weight_decay", "momentum", "base_lr",
                              "warmup_epochs", "total_epochs"});
  if (o.contains("preset")) {
    const std::string name = require<std::string>(o, "optimizer", "preset");
    auto cfg = find_preset(name);
    if (!cfg) throw ConfigError("unknown optimizer preset \"" + name + "\"");
    return *cfg;
  }
  const std::string kind = require<std::string>(o, "optimizer", "kind");
  OptimizerConfig cfg;
  if (kind == "adam") {
    cfg.kind = OptimizerKind::Adam;
    cfg.adam.lr = get_or(o, "optimizer", "lr", cfg.adam.lr);
    cfg.adam.beta1 = get_or(o, "optimizer", "beta1", cfg.adam.beta1);
    cfg.adam.beta2 = get_or(o, "optimizer", "beta2", cfg.adam.beta2);
    cfg.adam.epsilon = get_or(o, "optimizer", "epsilon", cfg.adam.epsilon);
    if (cfg.adam.beta1 < 0 || cfg.adam.beta1 >= 1 || cfg.adam.beta2 < 0 ||
        cfg.adam.beta2 >= 1) {
      throw ConfigError("adam beta1/beta2 must be in [0,1)");
    }
    return cfg;
  }
  if (kind == "lars_scaled" || kind == "lars_unscaled") {
    cfg.kind = kind == "lars_scaled" ? OptimizerKind::LarsScaled
                                     : OptimizerKind::LarsUnscaled;
    cfg.lars.epsilon = get_or(o, "optimizer", "epsilon", cfg.lars.epsilon);
    cfg.lars.weight_decay =
        get_or(o, "optimizer", "weight_decay", cfg.lars.weight_decay);
    cfg.lars.momentum = get_or(o, "optimizer", "momentum", cfg.lars.momentum);
    cfg.lars.base_lr = get_or(o, "optimizer", "base_lr", cfg.lars.base_lr);
    cfg.lars.warmup_epochs =
        get_or(o, "optimizer", "warmup_epochs", cfg.lars.warmup_epochs);
    cfg.lars.total_epochs =
        get_or(o, "optimizer", "total_epochs", cfg.lars.total_epochs);
    if (cfg.lars.epsilon <= 0) throw ConfigError("lars epsilon must be > 0");
    if (cfg.lars.momentum < 0 || cfg.lars.momentum >= 1) {
      throw ConfigError("lars momentum must be in [0,1)");
    }
    if (cfg.lars.weight_decay < 0) throw ConfigError("lars weight_decay must be >= 0");
    if (cfg.lars.warmup_epochs > cfg.lars.total_epochs) {
      throw ConfigError("warmup_epochs must not exceed total_epochs");
    }
    return cfg;
  }
  throw ConfigError("unknown optimizer kind \"" + kind + "\"");
}

json optimizer_to_json(const ExperimentConfig& cfg) {
  json o;
  if (!cfg.optimizer_preset.empty()) {
    o["preset"] = cfg.optimizer_preset;
    return o;
  }
  const OptimizerConfig& c = *cfg.optimizer;
  switch (c.kind) {
    case OptimizerKind::Adam:
      o["kind"] = "adam";
      o["lr"] = c.adam.lr;
      o["beta1"] = c.adam.beta1;
      o["beta2"] = c.adam.beta2;
      o["epsilon"] = c.adam.epsilon;
      break;
    case OptimizerKind::LarsScaled:
    case OptimizerKind::LarsUnscaled:
      o["kind"] = c.kind == OptimizerKind::LarsScaled ? "lars_scaled"
                                                      : "lars_unscaled";
      o["epsilon"] = c.lars.epsilon;
      o["weight_decay"] = c.lars.weight_decay;
      o["momentum"] = c.lars.momentum;
      o["base_lr"] = c.lars.base_lr;
      o["warmup_epochs"] = c.lars.warmup_epochs;
      o["total_epochs"] = c.lars.total_epochs;
      break;
  }
  return o;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config root must be an object");
  check_keys(root, "config",
             {"version", "kind", "seed", "topology", "batch", "optimizer",
              "output", "train", "sweep", "compare", "pipeline", "shard_equiv"});

  ExperimentConfig cfg;
  cfg.version = require<int>(root, "config", "version");
  if (cfg.version != 1) throw ConfigError("unsupported config version");
  cfg.kind = parse_kind(require<std::string>(root, "config", "kind"));
  cfg.seed = require<uint64_t>(root, "config", "seed");
  cfg.output = get_or<std::string>(root, "config", "output", "out");

  if (root.contains("topology")) {
    const json& t = root["topology"];
    check_keys(t, "topology", {"rows", "cols"});
    cfg.topology.rows = require<int>(t, "topology", "rows");
    cfg.topology.cols = require<int>(t, "topology", "cols");
    if (cfg.topology.rows < 1 || cfg.topology.cols < 1) {
      throw ConfigError("topology extents must be >= 1");
    }
  }
  if (root.contains("batch")) {
    const json& b = root["batch"];
    check_keys(b, "batch", {"global", "per_core"});
    cfg.global_batch = get_or<int64_t>(b, "batch", "global", 0);
    cfg.per_core_batch = get_or<int>(b, "batch", "per_core", 0);
    const int P = cfg.topology.num_cores();
    if (cfg.global_batch == 0 && cfg.per_core_batch > 0) {
      cfg.global_batch = static_cast<int64_t>(cfg.per_core_batch) * P;
    } else if (cfg.per_core_batch == 0 && cfg.global_batch > 0) {
      if (cfg.global_batch % P != 0) {
        throw ConfigError("batch.global not divisible by core count");
      }
      cfg.per_core_batch = static_cast<int>(cfg.global_batch / P);
    } else if (cfg.global_batch != static_cast<int64_t>(cfg.per_core_batch) * P) {
      throw ConfigError("batch.global must equal batch.per_core * cores");
    }
  }
  if (root.contains("optimizer")) {
    cfg.optimizer = parse_optimizer(root["optimizer"]);
    if (root["optimizer"].contains("preset")) {
      cfg.optimizer_preset = root["optimizer"]["preset"].get<std::string>();
    }
  }
  if (root.contains("train")) {
    const json& t = root["train"];
    check_keys(t, "train",
               {"model", "dataset_size", "eval_size", "classes", "noise",
                "max_epochs", "eval_every_epochs", "target_metric"});
    cfg.train.model = get_or<std::string>(t, "train", "model", cfg.train.model);
    if (cfg.train.model != "cnn" && cfg.train.model != "lstm") {
      throw ConfigError("train.model must be \"cnn\" or \"lstm\"");
    }
    cfg.train.dataset_size = get_or(t, "train", "dataset_size", cfg.train.dataset_size);
    cfg.train.eval_size = get_or(t, "train", "eval_size", cfg.train.eval_size);
    cfg.train.classes = get_or(t, "train", "classes", cfg.train.classes);
    cfg.train.noise = get_or(t, "train", "noise", cfg.train.noise);
    cfg.train.max_epochs = get_or(t, "train", "max_epochs", cfg.train.max_epochs);
    cfg.train.eval_every_epochs =
        get_or(t, "train", "eval_every_epochs", cfg.train.eval_every_epochs);
    cfg.train.target_metric =
        get_or(t, "train", "target_metric", cfg.train.target_metric);
    if (cfg.train.eval_every_epochs < 1) {
      throw ConfigError("train.eval_every_epochs must be >= 1");
    }
  }
  if (root.contains("sweep")) {
    const json& s = root["sweep"];
    check_keys(s, "sweep", {"bytes", "chunks", "link_bandwidth", "hop_latency",
                            "mem_bandwidth", "chunk_overhead"});
    cfg.sweep.bytes = require<std::vector<int64_t>>(s, "sweep", "bytes");
    cfg.sweep.chunks = require<std::vector<int>>(s, "sweep", "chunks");
    cfg.sweep.cost.link_bandwidth =
        get_or(s, "sweep", "link_bandwidth", cfg.sweep.cost.link_bandwidth);
    cfg.sweep.cost.hop_latency =
        get_or(s, "sweep", "hop_latency", cfg.sweep.cost.hop_latency);
    cfg.sweep.cost.mem_bandwidth =
        get_or(s, "sweep", "mem_bandwidth", cfg.sweep.cost.mem_bandwidth);
    cfg.sweep.cost.chunk_overhead =
        get_or(s, "sweep", "chunk_overhead", cfg.sweep.cost.chunk_overhead);
    if (cfg.sweep.cost.link_bandwidth <= 0 || cfg.sweep.cost.hop_latency <= 0 ||
        cfg.sweep.cost.mem_bandwidth <= 0 || cfg.sweep.cost.chunk_overhead <= 0) {
      throw ConfigError("sweep cost parameters must be strictly positive");
    }
  }
  if (root.contains("compare")) {
    const json& c = root["compare"];
    check_keys(c, "compare", {"presets", "seeds", "batch_sizes"});
    cfg.compare.presets =
        get_or<std::vector<std::string>>(c, "compare", "presets", {});
    cfg.compare.seeds = get_or(c, "compare", "seeds", cfg.compare.seeds);
    cfg.compare.batch_sizes =
        get_or<std::vector<int64_t>>(c, "compare", "batch_sizes", {});
    for (const auto& p : cfg.compare.presets) {
      if (!find_preset(p)) throw ConfigError("unknown preset \"" + p + "\" in compare.presets");
    }
    if (cfg.compare.seeds < 1) throw ConfigError("compare.seeds must be >= 1");
  }
  if (root.contains("pipeline")) {
    const json& p = root["pipeline"];
    check_keys(p, "pipeline", {"corpus_size", "max_length", "window_width",
                               "batch_size", "hosts", "seeds"});
    cfg.pipeline.corpus_size = get_or(p, "pipeline", "corpus_size", cfg.pipeline.corpus_size);
    cfg.pipeline.max_length = get_or(p, "pipeline", "max_length", cfg.pipeline.max_length);
    cfg.pipeline.window_width = get_or(p, "pipeline", "window_width", cfg.pipeline.window_width);
    cfg.pipeline.batch_size = get_or(p, "pipeline", "batch_size", cfg.pipeline.batch_size);
    cfg.pipeline.hosts = get_or(p, "pipeline", "hosts", cfg.pipeline.hosts);
    cfg.pipeline.seeds = get_or(p, "pipeline", "seeds", cfg.pipeline.seeds);
  }
  if (root.contains("shard_equiv")) {
    const json& s = root["shard_equiv"];
    check_keys(s, "shard_equiv",
               {"kernel_sizes", "grids", "cases", "shard_counts", "steps"});
    cfg.shard_equiv.kernel_sizes = get_or<std::vector<int>>(
        s, "shard_equiv", "kernel_sizes", cfg.shard_equiv.kernel_sizes);
    if (s.contains("grids")) {
      cfg.shard_equiv.grids.clear();
      for (const auto& g : s["grids"]) {
        if (!g.is_array() || g.size() != 2) {
          throw ConfigError("shard_equiv.grids entries must be [gh,gw] pairs");
        }
        cfg.shard_equiv.grids.emplace_back(g[0].get<int>(), g[1].get<int>());
      }
    }
    cfg.shard_equiv.cases = get_or(s, "shard_equiv", "cases", cfg.shard_equiv.cases);
    cfg.shard_equiv.shard_counts = get_or<std::vector<int>>(
        s, "shard_equiv", "shard_counts", cfg.shard_equiv.shard_counts);
    cfg.shard_equiv.steps = get_or(s, "shard_equiv", "steps", cfg.shard_equiv.steps);
  }

  // Kind-specific requirements.
  if (cfg.kind == ExperimentKind::Train) {
    if (!cfg.optimizer) throw ConfigError("train experiments require an optimizer");
    if (cfg.per_core_batch < 1) throw ConfigError("train experiments require batch settings");
  }
  if (cfg.kind == ExperimentKind::CollectiveSweep && cfg.sweep.bytes.empty()) {
    throw ConfigError("collective_sweep requires sweep.bytes");
  }
  if (cfg.kind == ExperimentKind::OptimizerCompare && cfg.compare.presets.empty() &&
      !cfg.optimizer) {
    throw ConfigError("optimizer_compare requires compare.presets or an optimizer");
  }

  cfg.normalized_json = serialize_experiment_config(cfg);
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str());
}

std::string serialize_experiment_config(const ExperimentConfig& cfg) {
  json root;
  root["version"] = cfg.version;
  root["kind"] = kind_name(cfg.kind);
  root["seed"] = cfg.seed;
  root["output"] = cfg.output;
  root["topology"] = {{"rows", cfg.topology.rows}, {"cols", cfg.topology.cols}};
  if (cfg.per_core_batch > 0) {
    root["batch"] = {{"global", cfg.global_batch},
                     {"per_core", cfg.per_core_batch}};
  }
  if (cfg.optimizer) root["optimizer"] = optimizer_to_json(cfg);
  switch (cfg.kind) {
    case ExperimentKind::Train:
    case ExperimentKind::OptimizerCompare:
      root["train"] = {{"model", cfg.train.model},
                       {"dataset_size", cfg.train.dataset_size},
                       {"eval_size", cfg.train.eval_size},
                       {"classes", cfg.train.classes},
                       {"noise", cfg.train.noise},
                       {"max_epochs", cfg.train.max_epochs},
                       {"eval_every_epochs", cfg.train.eval_every_epochs},
                       {"target_metric", cfg.train.target_metric}};
      break;
    default:
      break;
  }
  if (cfg.kind == ExperimentKind::CollectiveSweep) {
    root["sweep"] = {{"bytes", cfg.sweep.bytes},
                     {"chunks", cfg.sweep.chunks},
                     {"link_bandwidth", cfg.sweep.cost.link_bandwidth},
                     {"hop_latency", cfg.sweep.cost.hop_latency},
                     {"mem_bandwidth", cfg.sweep.cost.mem_bandwidth},
                     {"chunk_overhead", cfg.sweep.cost.chunk_overhead}};
  }
  if (cfg.kind == ExperimentKind::OptimizerCompare) {
    root["compare"] = {{"presets", cfg.compare.presets},
                       {"seeds", cfg.compare.seeds},
                       {"batch_sizes", cfg.compare.batch_sizes}};
  }
  if (cfg.kind == ExperimentKind::PipelineStudy) {
    root["pipeline"] = {{"corpus_size", cfg.pipeline.corpus_size},
                        {"max_length", cfg.pipeline.max_length},
                        {"window_width", cfg.pipeline.window_width},
                        {"batch_size", cfg.pipeline.batch_size},
                        {"hosts", cfg.pipeline.hosts},
                        {"seeds", cfg.pipeline.seeds}};
  }
  if (cfg.kind == ExperimentKind::ShardEquiv) {
    json grids = json::array();
    for (auto [gh, gw] : cfg.shard_equiv.grids) grids.push_back({gh, gw});
    root["shard_equiv"] = {{"kernel_sizes", cfg.shard_equiv.kernel_sizes},
                           {"grids", grids},
                           {"cases", cfg.shard_equiv.cases},
                           {"shard_counts", cfg.shard_equiv.shard_counts},
                           {"steps", cfg.shard_equiv.steps}};
  }
  return root.dump(2) + "\n";
}

namespace {

namespace fs = std::filesystem;

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw std::runtime_error("failed to write " + path.string());
}

void write_error(const fs::path& dir, int code, const std::string& message) {
  json err = {{"code", code}, {"error", message}};
  write_file(dir / "error.json", err.dump(2) + "\n");
}

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> workers;
  const int count = std::min(jobs, n);
  workers.reserve(static_cast<size_t>(count));
  for (int w = 0; w < count; ++w) {
    workers.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& t : workers) t.join();
}

std::string metrics_line(const MetricsRecord& r, const json& extra) {
  json line = extra;
  line["epoch"] = r.epoch;
  line["train_loss"] = r.train_loss;
  line["eval_metric"] = r.eval_metric;
  line["wall_steps"] = r.wall_steps;
  return line.dump() + "\n";
}

struct ToyRun {
  std::vector<MetricsRecord> records;
  double epochs_to_target = std::numeric_limits<double>::quiet_NaN();
};

std::unique_ptr<Model> make_model(const TrainSection& t, uint64_t seed) {
  if (t.model == "lstm") {
    LstmClassifier::Config mc;
    mc.classes = t.classes;
    return std::make_unique<LstmClassifier>(mc, seed);
  }
  CnnModel::Config mc;
  mc.classes = t.classes;
  return std::make_unique<CnnModel>(mc, seed);
}

Dataset make_train_dataset(const TrainSection& t, uint64_t seed, int64_t size) {
  if (t.model == "lstm") {
    return make_token_sequence_dataset(seed, size, 8, 16, t.classes, t.noise);
  }
  return make_gaussian_image_dataset(seed, size, 8, 8, 1, t.classes, t.noise);
}

ToyRun run_toy_training(const TrainSection& t, const OptimizerConfig& opt,
                        const TorusTopology& topo, int per_core_batch,
                        uint64_t seed) {
  const int64_t global = static_cast<int64_t>(topo.num_cores()) * per_core_batch;
  const int64_t ds_size = std::max<int64_t>(t.dataset_size, global);
  Dataset train = make_train_dataset(t, seed * 2654435761ull + 1, ds_size);
  Dataset eval = make_train_dataset(t, seed * 2654435761ull + 2, t.eval_size);
  EvalDataset eval_ds = pad_eval_dataset(eval, topo.num_cores(), per_core_batch);
  auto model = make_model(t, seed * 2654435761ull + 3);

  TrainLoopOptions options;
  options.per_core_batch = per_core_batch;
  options.eval_every_epochs = t.eval_every_epochs;
  options.max_epochs = t.max_epochs;
  options.target_metric = t.target_metric;
  options.shuffle_seed = seed;

  ToyRun run;
  run.records = run_train_and_eval(*model, train, eval_ds, opt, options, topo);
  for (const auto& r : run.records) {
    if (r.eval_metric >= t.target_metric) {
      run.epochs_to_target = r.epoch;
      break;
    }
  }
  return run;
}

int run_train(const ExperimentConfig& cfg, const fs::path& out, uint64_t seed) {
  try {
    ToyRun run = run_toy_training(cfg.train, *cfg.optimizer, cfg.topology,
                                  cfg.per_core_batch, seed);
    std::string jsonl, csv = "epoch,train_loss,eval_metric,wall_steps\n";
    for (const auto& r : run.records) {
      jsonl += metrics_line(r, json::object());
      csv += fmt(r.epoch) + "," + fmt(r.train_loss) + "," + fmt(r.eval_metric) +
             "," + std::to_string(r.wall_steps) + "\n";
    }
    write_file(out / "metrics.jsonl", jsonl);
    write_file(out / "summary.csv", csv);
    return kExitOk;
  } catch (const DivergenceError& e) {
    write_error(out, kExitDivergence, e.what());
    return kExitDivergence;
  }
}

int run_shard_equiv(const ExperimentConfig& cfg, const fs::path& out,
                    uint64_t seed) {
  std::string csv = "check,detail,max_deviation\n";
  double overall = 0.0;

  // Spatially sharded conv vs monolithic conv.
  Rng rng(seed * 7919 + 1);
  for (int K : cfg.shard_equiv.kernel_sizes) {
    for (auto [gh, gw] : cfg.shard_equiv.grids) {
      double worst = 0.0;
      for (int c = 0; c < cfg.shard_equiv.cases; ++c) {
        ConvParams params;
        params.kernel_size = K;
        params.in_channels = 2;
        params.out_channels = 3;
        Tensor input({1, 8, 8, 2});
        for (float& v : input.data) v = static_cast<float>(rng.normal());
        Tensor kernel({K, K, 2, 3});
        for (float& v : kernel.data) v = static_cast<float>(rng.normal());
        Tensor mono = conv2d(input, kernel, params);
        PartitionPlan plan = plan_partition(input.shape, params, {gh, gw, 1});
        Tensor shard = concat_output_shards(
            sharded_conv2d(extract_shards(input, plan), kernel, params, plan),
            plan);
        for (int64_t e = 0; e < mono.size(); ++e) {
          worst = std::max(worst, static_cast<double>(std::fabs(mono[e] - shard[e])));
        }
      }
      csv += "conv,K=" + std::to_string(K) + " grid=" + std::to_string(gh) +
             "x" + std::to_string(gw) + "," + fmt(worst) + "\n";
      overall = std::max(overall, worst);
    }
  }

  // Sharded weight update vs replicated update.
  const std::vector<std::pair<OptimizerKind, std::string>> opts = {
      {OptimizerKind::LarsScaled, "lars_scaled"},
      {OptimizerKind::LarsUnscaled, "lars_unscaled"},
      {OptimizerKind::Adam, "adam"}};
  for (auto [kind, name] : opts) {
    for (int shards : cfg.shard_equiv.shard_counts) {
      Rng r2(seed * 7919 + 100 + shards);
      std::vector<NamedTensor> w_rep, w_sh;
      for (int t = 0; t < 10; ++t) {
        Tensor w({3 + t});
        for (float& v : w.data) v = static_cast<float>(r2.normal());
        w_rep.push_back({"w" + std::to_string(t), w});
        w_sh.push_back({"w" + std::to_string(t), w});
      }
      OptimizerConfig oc;
      oc.kind = kind;
      oc.lars.momentum = 0.9;
      oc.lars.weight_decay = 1e-4;
      OptimizerState st_rep = OptimizerState::init_for(w_rep);
      OptimizerState st_sh = OptimizerState::init_for(w_sh);
      WeightShardLayout layout = build_weight_shard_layout(w_sh, shards);
      double worst = 0.0;
      for (int step = 0; step < cfg.shard_equiv.steps; ++step) {
        GradientSet g;
        for (const auto& nt : w_rep) {
          Tensor gt(nt.tensor.shape);
          for (float& v : gt.data) v = static_cast<float>(r2.normal() * 0.1);
          g.tensors.push_back({nt.name, gt});
        }
        apply_step(w_rep, g, st_rep, oc, 0.5);
        sharded_weight_update(w_sh, g, st_sh, layout, oc, 0.5);
        for (size_t t = 0; t < w_rep.size(); ++t) {
          for (int64_t e = 0; e < w_rep[t].tensor.size(); ++e) {
            worst = std::max(worst, static_cast<double>(std::fabs(
                                        w_rep[t].tensor[e] - w_sh[t].tensor[e])));
          }
        }
      }
      csv += "weight_update," + name + " shards=" + std::to_string(shards) +
             "," + fmt(worst) + "\n";
      overall = std::max(overall, worst);
    }
  }

  csv += "overall,,"+ fmt(overall) + "\n";
  write_file(out / "report.csv", csv);
  std::printf("max deviation %s\n", fmt(overall).c_str());
  if (overall != 0.0) {
    write_error(out, kExitInvariant,
                "sharded/monolithic deviation " + fmt(overall));
    return kExitInvariant;
  }
  return kExitOk;
}

int run_collective_sweep(const ExperimentConfig& cfg, const fs::path& out) {
  std::string csv = "scenario,bytes,chunks,pipelined,seconds\n";
  std::string speedup_csv = "scenario,bytes,chunks,speedup\n";
  for (int64_t bytes : cfg.sweep.bytes) {
    const double serial = estimate_summation_time(bytes, cfg.topology,
                                                  cfg.sweep.cost, 1, false);
    csv += "default," + std::to_string(bytes) + ",1,0," + fmt(serial) + "\n";
    for (int chunks : cfg.sweep.chunks) {
      const double piped = estimate_summation_time(bytes, cfg.topology,
                                                   cfg.sweep.cost, chunks, true);
      csv += "default," + std::to_string(bytes) + "," + std::to_string(chunks) +
             ",1," + fmt(piped) + "\n";
      speedup_csv += "default," + std::to_string(bytes) + "," +
                     std::to_string(chunks) + "," + fmt(serial / piped) + "\n";
    }
  }
  write_file(out / "sweep.csv", csv);
  write_file(out / "speedup.csv", speedup_csv);
  return kExitOk;
}

int run_optimizer_compare(const ExperimentConfig& cfg, const fs::path& out,
                          uint64_t seed, int jobs) {
  struct Arm {
    std::string label;
    OptimizerConfig opt;
  };
  std::vector<Arm> arms;
  for (const auto& p : cfg.compare.presets) arms.push_back({p, *find_preset(p)});
  if (arms.empty()) arms.push_back({"custom", *cfg.optimizer});

  std::vector<int64_t> batches = cfg.compare.batch_sizes;
  if (batches.empty()) batches.push_back(cfg.global_batch > 0 ? cfg.global_batch : 256);

  const int P = cfg.topology.num_cores();
  for (int64_t b : batches) {
    if (b % P != 0) throw ConfigError("batch size " + std::to_string(b) +
                                      " not divisible by core count");
  }

  struct Cell {
    std::vector<MetricsRecord> records;
    double epochs = std::numeric_limits<double>::quiet_NaN();
    bool diverged = false;
  };
  const int S = cfg.compare.seeds;
  std::vector<Cell> cells(arms.size() * batches.size() * static_cast<size_t>(S));

  const int total = static_cast<int>(cells.size());
  std::atomic<bool> diverged_any{false};
  parallel_for(total, jobs, [&](int i) {
    const size_t a = static_cast<size_t>(i) % arms.size();
    const size_t rest = static_cast<size_t>(i) / arms.size();
    const size_t bi = rest % batches.size();
    const int s = static_cast<int>(rest / batches.size());
    try {
      ToyRun run = run_toy_training(
          cfg.train, arms[a].opt, cfg.topology,
          static_cast<int>(batches[bi] / P), seed + static_cast<uint64_t>(s));
      cells[static_cast<size_t>(i)].records = std::move(run.records);
      cells[static_cast<size_t>(i)].epochs = run.epochs_to_target;
    } catch (const DivergenceError&) {
      cells[static_cast<size_t>(i)].diverged = true;
      diverged_any = true;
    }
  });

  std::string jsonl;
  std::string csv = "preset,batch,seed,epochs_to_target\n";
  for (int s = 0; s < S; ++s) {
    for (size_t bi = 0; bi < batches.size(); ++bi) {
      for (size_t a = 0; a < arms.size(); ++a) {
        const size_t i = (static_cast<size_t>(s) * batches.size() + bi) * arms.size() + a;
        const Cell& cell = cells[i];
        json extra = {{"preset", arms[a].label},
                      {"batch", batches[bi]},
                      {"seed", s}};
        for (const auto& r : cell.records) jsonl += metrics_line(r, extra);
        csv += arms[a].label + "," + std::to_string(batches[bi]) + "," +
               std::to_string(s) + "," +
               (cell.diverged ? "diverged" : fmt(cell.epochs)) + "\n";
      }
    }
  }
  write_file(out / "trajectories.jsonl", jsonl);
  write_file(out / "epochs_to_target.csv", csv);

  if (batches.size() >= 2) {
    // Curve over the first arm, mean across seeds.
    std::vector<BatchEpochPoint> points;
    for (size_t bi = 0; bi < batches.size(); ++bi) {
      double sum = 0.0;
      int n = 0;
      for (int s = 0; s < S; ++s) {
        const size_t i = (static_cast<size_t>(s) * batches.size() + bi) * arms.size();
        if (!cells[i].diverged && std::isfinite(cells[i].epochs)) {
          sum += cells[i].epochs;
          n += 1;
        }
      }
      points.push_back({batches[bi],
                        n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN()});
    }
    write_file(out / "batch_epoch_curve.csv", report_batch_epoch_curve(points));
  }
  return diverged_any ? kExitDivergence : kExitOk;
}

int run_pipeline_study(const ExperimentConfig& cfg, const fs::path& out,
                       uint64_t seed, int jobs) {
  const PipelineSection& p = cfg.pipeline;
  struct Row {
    double round_robin = 0, random_assign = 0;
  };
  std::vector<Row> rows(static_cast<size_t>(p.seeds));
  parallel_for(p.seeds, jobs, [&](int i) {
    Rng rng(seed + static_cast<uint64_t>(i) * 1315423911ull);
    std::vector<SequenceExample> corpus;
    corpus.reserve(static_cast<size_t>(p.corpus_size));
    for (int e = 0; e < p.corpus_size; ++e) {
      SequenceExample ex;
      ex.length = static_cast<int>(rng.uniform_int(1, p.max_length));
      ex.tokens.assign(static_cast<size_t>(ex.length), 1);
      corpus.push_back(std::move(ex));
    }
    auto batches = window_bucketize(corpus, {p.window_width, p.batch_size});
    rows[static_cast<size_t>(i)].round_robin =
        load_balance_metric(round_robin_distribute(batches, p.hosts));
    std::vector<std::vector<SequenceBatch>> random_hosts(
        static_cast<size_t>(p.hosts));
    for (const auto& b : batches) {
      random_hosts[static_cast<size_t>(rng.uniform_int(0, p.hosts - 1))]
          .push_back(b);
    }
    rows[static_cast<size_t>(i)].random_assign = load_balance_metric(random_hosts);
  });

  std::string csv = "seed,round_robin_ratio,random_ratio\n";
  int wins = 0;
  for (int i = 0; i < p.seeds; ++i) {
    const Row& r = rows[static_cast<size_t>(i)];
    csv += std::to_string(i) + "," + fmt(r.round_robin) + "," +
           fmt(r.random_assign) + "\n";
    if (r.round_robin <= r.random_assign) wins += 1;
  }
  csv += "wins," + std::to_string(wins) + "," + std::to_string(p.seeds) + "\n";
  write_file(out / "pipeline.csv", csv);
  return kExitOk;
}

}  // namespace

std::string report_batch_epoch_curve(const std::vector<BatchEpochPoint>& results) {
  if (results.empty()) throw InvariantError("empty batch/epoch results");
  std::string csv = "batch,epochs_to_target,monotone\n";
  double prev = -std::numeric_limits<double>::infinity();
  for (const auto& p : results) {
    const bool ok = !(p.epochs_to_target < prev);
    csv += std::to_string(p.batch) + "," + fmt(p.epochs_to_target) + "," +
           (ok ? "1" : "0") + "\n";
    if (std::isfinite(p.epochs_to_target)) prev = p.epochs_to_target;
  }
  return csv;
}

int run_experiment(const ExperimentConfig& cfg, const RunOptions& options) {
  const fs::path out = options.out_dir.empty() ? cfg.output : options.out_dir;
  fs::create_directories(out);
  const uint64_t seed = options.seed_override.value_or(cfg.seed);
  write_file(out / "config.json", serialize_experiment_config(cfg));
  try {
    switch (cfg.kind) {
      case ExperimentKind::Train:
        return run_train(cfg, out, seed);
      case ExperimentKind::ShardEquiv:
        return run_shard_equiv(cfg, out, seed);
      case ExperimentKind::CollectiveSweep:
        return run_collective_sweep(cfg, out);
      case ExperimentKind::OptimizerCompare:
        return run_optimizer_compare(cfg, out, seed, options.jobs);
      case ExperimentKind::PipelineStudy:
        return run_pipeline_study(cfg, out, seed, options.jobs);
    }
  } catch (const ConfigError& e) {
    write_error(out, kExitConfig, e.what());
    return kExitConfig;
  } catch (const InvariantError& e) {
    write_error(out, kExitInvariant, e.what());
    return kExitInvariant;
  } catch (const DivergenceError& e) {
    write_error(out, kExitDivergence, e.what());
    return kExitDivergence;
  }
  return kExitConfig;
}

int run_experiment_file(const std::string& config_path,
                        const RunOptions& options) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  return run_experiment(cfg, options);
}

}  // namespace podscale
