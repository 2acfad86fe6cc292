#include "pairdiff/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "pairdiff/augment.hpp"
#include "pairdiff/checkpoint.hpp"
#include "pairdiff/codec.hpp"
#include "pairdiff/common.hpp"
#include "pairdiff/datagen.hpp"
#include "pairdiff/metrics.hpp"
#include "pairdiff/segment.hpp"

namespace pairdiff::experiment {

namespace fs = std::filesystem;
using diffusion::PredictionMode;
using nd::Tensor;

// ---------------------------------------------------------------------------
// small utilities

namespace {

std::string fmt_g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string fmt_f2(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string read_file(const std::string& path, const std::string& producer) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    if (producer.empty()) throw ConfigError("cannot read " + path);
    throw MissingArtifactError("missing " + path + "; run `" + producer + "` first");
  }
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + tmp);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw Error("short write to " + tmp);
  }
  fs::rename(tmp, path);
}

uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingArtifactError("cannot hash missing file " + path);
  uint64_t h = 1469598103934665603ull;
  char buf[65536];
  while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
    const std::streamsize got = f.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h = (h ^ static_cast<uint8_t>(buf[i])) * 1099511628211ull;
    }
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// one splitmix64 round; stage streams are decorrelated from the master seed
uint64_t mix_seed(uint64_t base, uint64_t tag) {
  uint64_t z = base + 0x9E3779B97F4A7C15ull * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

constexpr uint64_t kTagData = 1, kTagDiff = 2, kTagSample = 3, kTagSr = 4, kTagSrSample = 5,
                   kTagAug = 6, kTagSeg = 7, kTagSweep = 8, kTagAblate = 9;

std::string trimmed(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

// strict numeric parsing: the whole token must be consumed
double parse_num(const std::string& key, const std::string& v) {
  if (v.empty()) throw ConfigError(key + ": empty value");
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || !std::isfinite(d))
    throw ConfigError(key + ": bad number '" + v + "'");
  return d;
}

long long parse_int(const std::string& key, const std::string& v) {
  if (v.empty()) throw ConfigError(key + ": empty value");
  char* end = nullptr;
  const long long i = std::strtoll(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size()) throw ConfigError(key + ": bad integer '" + v + "'");
  return i;
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  if (v.empty()) throw ConfigError(key + ": empty value");
  char* end = nullptr;
  const unsigned long long i = std::strtoull(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size()) throw ConfigError(key + ": bad integer '" + v + "'");
  return i;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError(key + ": bad boolean '" + v + "' (use 0/1/true/false)");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  size_t from = 0;
  while (true) {
    const size_t at = s.find(sep, from);
    if (at == std::string::npos) {
      out.push_back(s.substr(from));
      return out;
    }
    out.push_back(s.substr(from, at - from));
    from = at + 1;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// config

std::string plan_name(Plan p) {
  switch (p) {
    case Plan::Synthetic: return "synthetic";
    case Plan::None: return "none";
    case Plan::Cutout: return "cutout";
    case Plan::CutMix: return "cutmix";
    case Plan::CopyPaste: return "copy_paste";
  }
  throw Error("unreachable plan");
}

Plan parse_plan(const std::string& s) {
  if (s == "synthetic") return Plan::Synthetic;
  if (s == "none") return Plan::None;
  if (s == "cutout") return Plan::Cutout;
  if (s == "cutmix") return Plan::CutMix;
  if (s == "copy_paste") return Plan::CopyPaste;
  throw ConfigError("unknown plan '" + s + "'");
}

namespace {

std::string encoding_name(Encoding e) { return e == Encoding::Bits ? "bin" : "onehot"; }

Encoding parse_encoding(const std::string& s) {
  if (s == "bin") return Encoding::Bits;
  if (s == "onehot") return Encoding::OneHot;
  throw ConfigError("diff.encoding: expected bin or onehot, got '" + s + "'");
}

std::string predict_name(PredictionMode m) {
  return m == PredictionMode::Epsilon ? "eps" : "x0";
}

PredictionMode parse_predict(const std::string& s) {
  if (s == "eps") return PredictionMode::Epsilon;
  if (s == "x0") return PredictionMode::X0;
  throw ConfigError("diff.predict: expected eps or x0, got '" + s + "'");
}

void check_net(const std::string& what, int base_width, int depth, int time_dim) {
  if (base_width < 2 || base_width % 2 != 0)
    throw ConfigError(what + ".base_width must be even and >= 2");
  if (depth < 0 || depth > 4) throw ConfigError(what + ".depth must be in [0, 4]");
  if (time_dim < 2 || time_dim % 2 != 0) throw ConfigError(what + ".time_dim must be even and >= 2");
}

void check_train(const std::string& what, int steps, int batch, double lr) {
  if (steps < 1) throw ConfigError(what + ".steps must be >= 1");
  if (batch < 1) throw ConfigError(what + ".batch must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError(what + ".lr must be finite and positive");
}

}  // namespace

void ExperimentConfig::validate() const {
  if (out_dir.empty()) throw ConfigError("out_dir is required");
  if (data_train < 1) throw ConfigError("data.train must be >= 1");
  if (data_val < 1) throw ConfigError("data.val must be >= 1");
  if (diff_t < 1) throw ConfigError("diff.t must be >= 1");
  check_train("diff", diff_steps, diff_batch, diff_lr);
  check_net("diff", diff_base_width, diff_depth, diff_time_dim);
  if (diff_ema < 0.0 || diff_ema >= 1.0) throw ConfigError("diff.ema must be in [0, 1)");
  check_train("sr", sr_steps, sr_batch, sr_lr);
  check_net("sr", sr_base_width, sr_depth, sr_time_dim);
  if (sample_count < 1) throw ConfigError("sample.count must be >= 1");
  if (augset_r < 0 || augset_r > 5) throw ConfigError("augset.r must be in [0, 5]");
  if (seg_base_width < 2 || seg_base_width % 2 != 0)
    throw ConfigError("seg.base_width must be even and >= 2");
  if (seg_depth < 2 || seg_depth > 6) throw ConfigError("seg.depth must be in [2, 6]");
  if (seg_epochs < 0) throw ConfigError("seg.epochs must be >= 0");
  if (seg_batch < 1) throw ConfigError("seg.batch must be >= 1");
  if (!(seg_lr > 0.0) || !std::isfinite(seg_lr)) throw ConfigError("seg.lr must be finite and positive");
  if (sweep_r_grid.empty()) throw ConfigError("sweep.r_grid must not be empty");
  for (size_t i = 0; i < sweep_r_grid.size(); ++i) {
    if (sweep_r_grid[i] < 0 || sweep_r_grid[i] > 5)
      throw ConfigError("sweep.r_grid entries must be in [0, 5]");
    if (i > 0 && sweep_r_grid[i] <= sweep_r_grid[i - 1])
      throw ConfigError("sweep.r_grid must be strictly increasing");
  }
  if (sweep_seeds < 1) throw ConfigError("sweep.seeds must be >= 1");
  if (sweep_plans.empty()) throw ConfigError("sweep.plans must not be empty");
  for (size_t i = 0; i < sweep_plans.size(); ++i) {
    for (size_t j = i + 1; j < sweep_plans.size(); ++j) {
      if (sweep_plans[i] == sweep_plans[j])
        throw ConfigError("sweep.plans lists '" + plan_name(sweep_plans[i]) + "' twice");
    }
  }
}

std::string ExperimentConfig::echo() const {
  std::ostringstream os;
  os << "out_dir=" << out_dir << "\n";
  os << "seed=" << seed << "\n";
  os << "scene_spec=" << scene_spec << "\n";
  os << "data.train=" << data_train << "\n";
  os << "data.val=" << data_val << "\n";
  os << "diff.t=" << diff_t << "\n";
  os << "diff.steps=" << diff_steps << "\n";
  os << "diff.batch=" << diff_batch << "\n";
  os << "diff.lr=" << fmt_g9(diff_lr) << "\n";
  os << "diff.base_width=" << diff_base_width << "\n";
  os << "diff.depth=" << diff_depth << "\n";
  os << "diff.time_dim=" << diff_time_dim << "\n";
  os << "diff.ema=" << fmt_g9(diff_ema) << "\n";
  os << "diff.encoding=" << encoding_name(encoding) << "\n";
  os << "diff.predict=" << predict_name(predict) << "\n";
  os << "sr.steps=" << sr_steps << "\n";
  os << "sr.batch=" << sr_batch << "\n";
  os << "sr.lr=" << fmt_g9(sr_lr) << "\n";
  os << "sr.base_width=" << sr_base_width << "\n";
  os << "sr.depth=" << sr_depth << "\n";
  os << "sr.time_dim=" << sr_time_dim << "\n";
  os << "sample.count=" << sample_count << "\n";
  os << "augset.r=" << augset_r << "\n";
  os << "augset.balance=" << (augset_balance ? 1 : 0) << "\n";
  os << "augset.plan=" << plan_name(augset_plan) << "\n";
  os << "seg.base_width=" << seg_base_width << "\n";
  os << "seg.depth=" << seg_depth << "\n";
  os << "seg.epochs=" << seg_epochs << "\n";
  os << "seg.batch=" << seg_batch << "\n";
  os << "seg.lr=" << fmt_g9(seg_lr) << "\n";
  os << "sweep.r_grid=";
  for (size_t i = 0; i < sweep_r_grid.size(); ++i) os << (i ? "," : "") << sweep_r_grid[i];
  os << "\n";
  os << "sweep.seeds=" << sweep_seeds << "\n";
  os << "sweep.balance=" << (sweep_balance ? 1 : 0) << "\n";
  os << "sweep.plans=";
  for (size_t i = 0; i < sweep_plans.size(); ++i) os << (i ? "," : "") << plan_name(sweep_plans[i]);
  os << "\n";
  return os.str();
}

namespace {

void apply_key(ExperimentConfig& c, const std::string& key, const std::string& value) {
  auto as_int = [&](int lo, int hi) {
    const long long v = parse_int(key, value);
    if (v < lo || v > hi) throw ConfigError(key + ": " + value + " out of range");
    return static_cast<int>(v);
  };
  if (key == "out_dir") c.out_dir = value;
  else if (key == "seed") c.seed = parse_u64(key, value);
  else if (key == "scene_spec") c.scene_spec = value;
  else if (key == "data.train") c.data_train = as_int(1, 1000000);
  else if (key == "data.val") c.data_val = as_int(1, 1000000);
  else if (key == "diff.t") c.diff_t = as_int(1, 100000);
  else if (key == "diff.steps") c.diff_steps = as_int(1, 100000000);
  else if (key == "diff.batch") c.diff_batch = as_int(1, 100000);
  else if (key == "diff.lr") c.diff_lr = parse_num(key, value);
  else if (key == "diff.base_width") c.diff_base_width = as_int(1, 100000);
  else if (key == "diff.depth") c.diff_depth = as_int(0, 100);
  else if (key == "diff.time_dim") c.diff_time_dim = as_int(1, 100000);
  else if (key == "diff.ema") c.diff_ema = parse_num(key, value);
  else if (key == "diff.encoding") c.encoding = parse_encoding(value);
  else if (key == "diff.predict") c.predict = parse_predict(value);
  else if (key == "sr.steps") c.sr_steps = as_int(1, 100000000);
  else if (key == "sr.batch") c.sr_batch = as_int(1, 100000);
  else if (key == "sr.lr") c.sr_lr = parse_num(key, value);
  else if (key == "sr.base_width") c.sr_base_width = as_int(1, 100000);
  else if (key == "sr.depth") c.sr_depth = as_int(0, 100);
  else if (key == "sr.time_dim") c.sr_time_dim = as_int(1, 100000);
  else if (key == "sample.count") c.sample_count = as_int(1, 100000000);
  else if (key == "augset.r") c.augset_r = as_int(0, 1000);
  else if (key == "augset.balance") c.augset_balance = parse_bool(key, value);
  else if (key == "augset.plan") c.augset_plan = parse_plan(value);
  else if (key == "seg.base_width") c.seg_base_width = as_int(1, 100000);
  else if (key == "seg.depth") c.seg_depth = as_int(1, 100);
  else if (key == "seg.epochs") c.seg_epochs = as_int(0, 1000000);
  else if (key == "seg.batch") c.seg_batch = as_int(1, 100000);
  else if (key == "seg.lr") c.seg_lr = parse_num(key, value);
  else if (key == "sweep.r_grid") {
    c.sweep_r_grid.clear();
    for (const std::string& tok : split(value, ','))
      c.sweep_r_grid.push_back(static_cast<int>(parse_int(key, trimmed(tok))));
  } else if (key == "sweep.seeds") c.sweep_seeds = as_int(1, 100000);
  else if (key == "sweep.balance") c.sweep_balance = parse_bool(key, value);
  else if (key == "sweep.plans") {
    c.sweep_plans.clear();
    for (const std::string& tok : split(value, ',')) c.sweep_plans.push_back(parse_plan(trimmed(tok)));
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

void apply_line(ExperimentConfig& c, const std::string& raw) {
  std::string line = raw;
  const size_t hash = line.find('#');
  if (hash != std::string::npos) line.resize(hash);
  line = trimmed(line);
  if (line.empty()) return;
  const size_t eq = line.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + line + "'");
  apply_key(c, trimmed(line.substr(0, eq)), trimmed(line.substr(eq + 1)));
}

}  // namespace

namespace {

void apply_text(ExperimentConfig& c, const std::string& text) {
  size_t from = 0;
  while (from <= text.size()) {
    const size_t to = text.find('\n', from);
    const std::string line = text.substr(from, to == std::string::npos ? std::string::npos : to - from);
    apply_line(c, line);
    if (to == std::string::npos) break;
    from = to + 1;
  }
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text) {
  ExperimentConfig c;
  apply_text(c, text);
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path);
  std::ostringstream os;
  os << f.rdbuf();
  ExperimentConfig c;
  try {
    apply_text(c, os.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  for (const std::string& ov : overrides) apply_line(c, ov);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// artifacts and manifests

namespace {

std::string art(const ExperimentConfig& cfg, const std::string& name) {
  return cfg.out_dir + "/" + name;
}

void require_artifact(const std::string& path, const std::string& producer) {
  if (!fs::exists(path))
    throw MissingArtifactError("missing " + path + "; run `" + producer + "` first");
}

struct Manifest {
  std::string subcommand;
  const ExperimentConfig* cfg;
  std::vector<std::string> inputs, stages, artifacts, notes;

  Manifest(std::string sub, const ExperimentConfig& c) : subcommand(std::move(sub)), cfg(&c) {}

  void add_input(const std::string& path) {
    inputs.push_back("input=" + path + " fnv1a=" + hex64(fnv1a64_file(path)));
  }
  void add_stage(const std::string& name, double ms) {
    stages.push_back("stage=" + name + " ms=" + fmt_f2(ms));
  }
  void add_artifact(const std::string& path) { artifacts.push_back("artifact=" + path); }
  void add_note(const std::string& line) { notes.push_back("note=" + line); }

  void write() const {
    std::ostringstream os;
    os << "subcommand=" << subcommand << "\n";
    os << "# config\n" << cfg->echo();
    os << "# inputs\n";
    for (const auto& l : inputs) os << l << "\n";
    os << "# stages\n";
    for (const auto& l : stages) os << l << "\n";
    os << "# artifacts\n";
    for (const auto& l : artifacts) os << l << "\n";
    for (const auto& l : notes) os << l << "\n";
    write_atomic(art(*cfg, subcommand + ".manifest"), os.str());
  }
};

template <typename Fn>
void timed(Manifest& man, const std::string& name, Fn&& fn) {
  const auto start = std::chrono::steady_clock::now();
  fn();
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  man.add_stage(name, ms);
}

datagen::SceneSpec load_scene(const ExperimentConfig& cfg) {
  if (cfg.scene_spec.empty()) return datagen::SceneSpec::default_spec();
  return datagen::parse_scene_spec(read_file(cfg.scene_spec, ""));
}

// ---------------------------------------------------------------------------
// label encoding plumbing

int joint_channels_of(int K, Encoding e) {
  return e == Encoding::Bits ? codec::joint_channels(K) : 3 + K;
}

Tensor pack(const LabeledPair& pair, int K, Encoding e) {
  return e == Encoding::Bits ? codec::pack_joint(pair, K) : codec::pack_joint_onehot(pair, K);
}

LabeledPair unpack(const Tensor& joint, int K, Encoding e) {
  return e == Encoding::Bits ? codec::unpack_joint(joint, K) : codec::unpack_joint_onehot(joint, K);
}

Tensor nn_upsample2(const Tensor& t) {
  Tensor out({t.dim(0) * 2, t.dim(1) * 2, t.dim(2)});
  for (int y = 0; y < out.dim(0); ++y)
    for (int x = 0; x < out.dim(1); ++x)
      for (int c = 0; c < t.dim(2); ++c) out.at(y, x, c) = t.at(y / 2, x / 2, c);
  return out;
}

// ---------------------------------------------------------------------------
// model sidecar: enough to rebuild the net and schedule for sampling

struct ModelMeta {
  std::string kind;  // diffusion | superres
  Encoding encoding = Encoding::Bits;
  PredictionMode predict = PredictionMode::Epsilon;
  int k = 0, t = 0, height = 0, width = 0;
  int in_channels = 0, base_width = 0, depth = 0, time_dim = 0;
  bool conditional = false;
  uint64_t schedule_hash = 0;
};

void write_meta(const std::string& path, const ModelMeta& m) {
  std::ostringstream os;
  os << "kind=" << m.kind << "\n";
  os << "encoding=" << encoding_name(m.encoding) << "\n";
  os << "predict=" << predict_name(m.predict) << "\n";
  os << "k=" << m.k << "\n";
  os << "t=" << m.t << "\n";
  os << "height=" << m.height << "\n";
  os << "width=" << m.width << "\n";
  os << "in_channels=" << m.in_channels << "\n";
  os << "base_width=" << m.base_width << "\n";
  os << "depth=" << m.depth << "\n";
  os << "time_dim=" << m.time_dim << "\n";
  os << "conditional=" << (m.conditional ? 1 : 0) << "\n";
  os << "schedule_hash=" << hex64(m.schedule_hash) << "\n";
  write_atomic(path, os.str());
}

ModelMeta read_meta(const std::string& path, const std::string& producer) {
  const std::string text = read_file(path, producer);
  ModelMeta m;
  int seen = 0;
  size_t from = 0;
  while (from < text.size()) {
    const size_t to = text.find('\n', from);
    const std::string line = text.substr(from, to == std::string::npos ? std::string::npos : to - from);
    from = to == std::string::npos ? text.size() : to + 1;
    if (trimmed(line).empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(path + ": bad line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    ++seen;
    try {
      if (key == "kind") m.kind = value;
      else if (key == "encoding") m.encoding = parse_encoding(value);
      else if (key == "predict") m.predict = parse_predict(value);
      else if (key == "k") m.k = static_cast<int>(parse_int(key, value));
      else if (key == "t") m.t = static_cast<int>(parse_int(key, value));
      else if (key == "height") m.height = static_cast<int>(parse_int(key, value));
      else if (key == "width") m.width = static_cast<int>(parse_int(key, value));
      else if (key == "in_channels") m.in_channels = static_cast<int>(parse_int(key, value));
      else if (key == "base_width") m.base_width = static_cast<int>(parse_int(key, value));
      else if (key == "depth") m.depth = static_cast<int>(parse_int(key, value));
      else if (key == "time_dim") m.time_dim = static_cast<int>(parse_int(key, value));
      else if (key == "conditional") m.conditional = parse_bool(key, value);
      else if (key == "schedule_hash") m.schedule_hash = std::strtoull(value.c_str(), nullptr, 16);
      else throw FormatError(path + ": unknown key '" + key + "'");
    } catch (const ConfigError& e) {
      throw FormatError(path + ": " + e.what());
    }
  }
  if (seen != 13) throw FormatError(path + ": expected 13 fields, got " + std::to_string(seen));
  if (m.k < 1 || m.t < 1 || m.height < 1 || m.width < 1 || m.in_channels < 1)
    throw FormatError(path + ": non-positive model dimensions");
  return m;
}

denoiser::DenoiserConfig denoiser_config(const ModelMeta& m) {
  denoiser::DenoiserConfig d;
  d.in_channels = m.in_channels;
  d.base_width = m.base_width;
  d.depth = m.depth;
  d.time_embed_dim = m.time_dim;
  d.conditional = m.conditional;
  return d;
}

nd::ParamStore load_model(const std::string& satw, const denoiser::DenoiserConfig& dcfg) {
  nd::ParamStore store;
  RngStream rng(0);
  denoiser::init_params(store, dcfg, rng);
  nd::load_params(satw, store);
  return store;
}

std::string loss_csv(const std::vector<diffusion::LossRecord>& log) {
  std::ostringstream os;
  os << "step,loss\n";
  for (const auto& rec : log) os << rec.step << "," << fmt_g9(rec.loss) << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// training-set assembly for every plan

std::vector<int> object_classes(const datagen::SceneSpec& scene) {
  std::vector<int> out;
  for (const auto& o : scene.objects) out.push_back(o.cls);
  return out;
}

augment::TrainingSet build_plan_training_set(Plan plan, const datagen::Corpus& real,
                                             const datagen::Corpus* synth, int R, bool balance,
                                             uint64_t seed, const std::vector<int>& paste_classes) {
  if (plan == Plan::Synthetic) {
    if (synth == nullptr) throw MissingArtifactError("synthetic plan needs a sampled pool");
    augment::ResamplePlan p;
    p.R = R;
    p.balance = balance;
    p.seed = seed;
    return augment::build_training_set(real, *synth, p);
  }
  if (real.pairs.empty()) throw ConfigError("real corpus is empty");

  augment::TrainingSet ts;
  ts.K = real.K;
  ts.plan.R = plan == Plan::None ? 0 : R;
  ts.plan.balance = balance;
  ts.plan.seed = seed;
  if (plan == Plan::None) {
    ts.pairs = real.pairs;
    ts.origin.assign(real.pairs.size(), augment::Origin::Real);
    return ts;
  }

  const int copies = (balance && R >= 1) ? R : 1;
  for (const auto& pair : real.pairs) {
    for (int c = 0; c < copies; ++c) {
      ts.pairs.push_back(pair);
      ts.origin.push_back(augment::Origin::Real);
    }
  }
  const uint64_t n = real.pairs.size();
  RngStream root(seed);
  for (int r = 0; r < R; ++r) {
    for (uint64_t i = 0; i < n; ++i) {
      RngStream s = root.derive(static_cast<uint64_t>(r) * n + i);
      const LabeledPair& src = real.pairs[i];
      LabeledPair aug;
      switch (plan) {
        case Plan::Cutout:
          aug = augment::cutout(src, s);
          break;
        case Plan::CutMix: {
          const uint64_t j = s.uniform_int(n);
          aug = augment::cutmix(src, real.pairs[j], s);
          break;
        }
        case Plan::CopyPaste: {
          if (paste_classes.empty())
            throw ConfigError("copy_paste plan needs a scene with object classes");
          const uint64_t j = s.uniform_int(n);
          aug = augment::copy_paste(src, real.pairs[j], s, paste_classes).pair;
          break;
        }
        default:
          throw Error("unreachable plan");
      }
      ts.pairs.push_back(std::move(aug));
      ts.origin.push_back(augment::Origin::Synthetic);
    }
  }
  return ts;
}

segment::SegConfig seg_config(const ExperimentConfig& cfg, int K, uint64_t seed) {
  segment::SegConfig sc;
  sc.K = K;
  sc.base_width = cfg.seg_base_width;
  sc.depth = cfg.seg_depth;
  sc.epochs = cfg.seg_epochs;
  sc.batch = cfg.seg_batch;
  sc.lr = static_cast<float>(cfg.seg_lr);
  sc.seed = seed;
  return sc;
}

// ---------------------------------------------------------------------------
// subcommands

void run_gen_data(const ExperimentConfig& cfg) {
  Manifest man("gen-data", cfg);
  const datagen::SceneSpec scene = load_scene(cfg);
  if (!cfg.scene_spec.empty()) man.add_input(cfg.scene_spec);
  const uint64_t base = mix_seed(cfg.seed, kTagData);
  datagen::Corpus train, val;
  timed(man, "gen_train", [&] { train = datagen::gen_corpus(scene, cfg.data_train, mix_seed(base, 1)); });
  timed(man, "gen_val", [&] { val = datagen::gen_corpus(scene, cfg.data_val, mix_seed(base, 2)); });
  datagen::save_corpus(train, art(cfg, "real.satp"));
  datagen::save_corpus(val, art(cfg, "val.satp"));
  write_atomic(art(cfg, "scene.txt"), datagen::format_scene_spec(scene));
  man.add_artifact(art(cfg, "real.satp"));
  man.add_artifact(art(cfg, "val.satp"));
  man.add_artifact(art(cfg, "scene.txt"));
  man.write();
}

void run_train_diff(const ExperimentConfig& cfg) {
  Manifest man("train-diff", cfg);
  const std::string real_path = art(cfg, "real.satp");
  require_artifact(real_path, "gen-data");
  man.add_input(real_path);
  const datagen::Corpus real = datagen::load_corpus(real_path);
  if (real.pairs.empty()) throw ConfigError(real_path + " holds no pairs");

  std::vector<Tensor> dataset;
  dataset.reserve(real.pairs.size());
  for (const auto& pair : real.pairs) dataset.push_back(pack(pair, real.K, cfg.encoding));

  ModelMeta meta;
  meta.kind = "diffusion";
  meta.encoding = cfg.encoding;
  meta.predict = cfg.predict;
  meta.k = real.K;
  meta.t = cfg.diff_t;
  meta.height = real.pairs[0].height();
  meta.width = real.pairs[0].width();
  meta.in_channels = joint_channels_of(real.K, cfg.encoding);
  meta.base_width = cfg.diff_base_width;
  meta.depth = cfg.diff_depth;
  meta.time_dim = cfg.diff_time_dim;
  meta.conditional = false;

  const denoiser::DenoiserConfig dcfg = denoiser_config(meta);
  const diffusion::NoiseSchedule sched = diffusion::linear_schedule(cfg.diff_t);
  meta.schedule_hash = sched.hash();

  diffusion::TrainConfig tcfg;
  tcfg.batch = cfg.diff_batch;
  tcfg.steps = cfg.diff_steps;
  tcfg.lr = static_cast<float>(cfg.diff_lr);
  tcfg.seed = mix_seed(cfg.seed, kTagDiff);
  tcfg.ema_decay = static_cast<float>(cfg.diff_ema);
  diffusion::SamplerConfig scfg;
  scfg.prediction = cfg.predict;

  nd::ParamStore params;
  RngStream init_rng(mix_seed(tcfg.seed, 1));
  denoiser::init_params(params, dcfg, init_rng);
  std::vector<diffusion::LossRecord> log;
  timed(man, "train", [&] {
    diffusion::train_diffusion(dataset, nullptr, params, dcfg, tcfg, scfg, sched, log);
  });

  nd::save_params(art(cfg, "diff.satw"), params);
  write_meta(art(cfg, "diff.meta"), meta);
  write_atomic(art(cfg, "diff_loss.csv"), loss_csv(log));
  man.add_artifact(art(cfg, "diff.satw"));
  man.add_artifact(art(cfg, "diff.meta"));
  man.add_artifact(art(cfg, "diff_loss.csv"));
  man.write();
}

void run_sample(const ExperimentConfig& cfg) {
  Manifest man("sample", cfg);
  require_artifact(art(cfg, "diff.satw"), "train-diff");
  require_artifact(art(cfg, "diff.meta"), "train-diff");
  man.add_input(art(cfg, "diff.satw"));
  man.add_input(art(cfg, "diff.meta"));
  const ModelMeta meta = read_meta(art(cfg, "diff.meta"), "train-diff");
  if (meta.conditional) throw FormatError("diff.meta describes a conditional model");

  const denoiser::DenoiserConfig dcfg = denoiser_config(meta);
  const nd::ParamStore params = load_model(art(cfg, "diff.satw"), dcfg);
  const diffusion::NoiseSchedule sched = diffusion::linear_schedule(meta.t);
  diffusion::SamplerConfig scfg;
  scfg.prediction = meta.predict;

  datagen::Corpus synth;
  synth.K = meta.k;
  timed(man, "sample", [&] {
    RngStream rng(mix_seed(cfg.seed, kTagSample));
    const std::vector<Tensor> joints = diffusion::sample_joint(
        params, dcfg, cfg.sample_count, meta.height, meta.width, scfg, sched, rng);
    synth.pairs.reserve(joints.size());
    for (const auto& j : joints) synth.pairs.push_back(unpack(j, meta.k, meta.encoding));
  });
  datagen::save_corpus(synth, art(cfg, "synth.satp"));
  man.add_artifact(art(cfg, "synth.satp"));
  man.write();
}

void run_train_sr(const ExperimentConfig& cfg) {
  Manifest man("train-sr", cfg);
  const std::string real_path = art(cfg, "real.satp");
  require_artifact(real_path, "gen-data");
  man.add_input(real_path);
  const datagen::Corpus real = datagen::load_corpus(real_path);
  if (real.pairs.empty()) throw ConfigError(real_path + " holds no pairs");

  // targets are native-resolution joints; conditioning is the 2x-downsampled
  // joint, upsampled back so the channels align at every site
  std::vector<Tensor> targets, conds;
  targets.reserve(real.pairs.size());
  conds.reserve(real.pairs.size());
  for (const auto& pair : real.pairs) {
    targets.push_back(pack(pair, real.K, cfg.encoding));
    conds.push_back(nn_upsample2(pack(datagen::downsample2(pair), real.K, cfg.encoding)));
  }

  ModelMeta meta;
  meta.kind = "superres";
  meta.encoding = cfg.encoding;
  meta.predict = cfg.predict;
  meta.k = real.K;
  meta.t = cfg.diff_t;
  meta.height = real.pairs[0].height() / 2;
  meta.width = real.pairs[0].width() / 2;
  meta.in_channels = joint_channels_of(real.K, cfg.encoding);
  meta.base_width = cfg.sr_base_width;
  meta.depth = cfg.sr_depth;
  meta.time_dim = cfg.sr_time_dim;
  meta.conditional = true;

  const denoiser::DenoiserConfig dcfg = denoiser_config(meta);
  const diffusion::NoiseSchedule sched = diffusion::linear_schedule(cfg.diff_t);
  meta.schedule_hash = sched.hash();

  diffusion::TrainConfig tcfg;
  tcfg.batch = cfg.sr_batch;
  tcfg.steps = cfg.sr_steps;
  tcfg.lr = static_cast<float>(cfg.sr_lr);
  tcfg.seed = mix_seed(cfg.seed, kTagSr);
  tcfg.ema_decay = static_cast<float>(cfg.diff_ema);
  diffusion::SamplerConfig scfg;
  scfg.prediction = cfg.predict;

  nd::ParamStore params;
  RngStream init_rng(mix_seed(tcfg.seed, 1));
  denoiser::init_params(params, dcfg, init_rng);
  std::vector<diffusion::LossRecord> log;
  timed(man, "train", [&] {
    diffusion::train_diffusion(targets, &conds, params, dcfg, tcfg, scfg, sched, log);
  });

  nd::save_params(art(cfg, "sr.satw"), params);
  write_meta(art(cfg, "sr.meta"), meta);
  write_atomic(art(cfg, "sr_loss.csv"), loss_csv(log));
  man.add_artifact(art(cfg, "sr.satw"));
  man.add_artifact(art(cfg, "sr.meta"));
  man.add_artifact(art(cfg, "sr_loss.csv"));
  man.write();
}

void run_superres(const ExperimentConfig& cfg) {
  Manifest man("superres", cfg);
  require_artifact(art(cfg, "synth.satp"), "sample");
  require_artifact(art(cfg, "sr.satw"), "train-sr");
  require_artifact(art(cfg, "sr.meta"), "train-sr");
  man.add_input(art(cfg, "synth.satp"));
  man.add_input(art(cfg, "sr.satw"));
  man.add_input(art(cfg, "sr.meta"));
  const ModelMeta meta = read_meta(art(cfg, "sr.meta"), "train-sr");
  if (!meta.conditional) throw FormatError("sr.meta describes an unconditional model");
  const datagen::Corpus synth = datagen::load_corpus(art(cfg, "synth.satp"));
  if (synth.K != meta.k)
    throw FormatError("synth.satp has K=" + std::to_string(synth.K) + " but sr.meta says K=" +
                      std::to_string(meta.k));

  const denoiser::DenoiserConfig dcfg = denoiser_config(meta);
  const nd::ParamStore params = load_model(art(cfg, "sr.satw"), dcfg);
  const diffusion::NoiseSchedule sched = diffusion::linear_schedule(meta.t);
  diffusion::SamplerConfig scfg;
  scfg.prediction = meta.predict;

  datagen::Corpus hi;
  hi.K = synth.K;
  hi.pairs.resize(synth.pairs.size());
  timed(man, "superres", [&] {
    RngStream root(mix_seed(cfg.seed, kTagSrSample));
#pragma omp parallel for schedule(dynamic, 1)
    for (int64_t i = 0; i < static_cast<int64_t>(synth.pairs.size()); ++i) {
      RngStream rng = root.derive(static_cast<uint64_t>(i));
      const Tensor low = pack(synth.pairs[static_cast<size_t>(i)], synth.K, meta.encoding);
      const Tensor out = diffusion::sample_superres(params, dcfg, low, scfg, sched, rng);
      hi.pairs[static_cast<size_t>(i)] = unpack(out, synth.K, meta.encoding);
    }
  });
  datagen::save_corpus(hi, art(cfg, "synth_hr.satp"));
  man.add_artifact(art(cfg, "synth_hr.satp"));
  man.write();
}

void run_build_augset(const ExperimentConfig& cfg) {
  Manifest man("build-augset", cfg);
  require_artifact(art(cfg, "real.satp"), "gen-data");
  man.add_input(art(cfg, "real.satp"));
  const datagen::Corpus real = datagen::load_corpus(art(cfg, "real.satp"));

  datagen::Corpus synth;
  const datagen::Corpus* synth_ptr = nullptr;
  if (cfg.augset_plan == Plan::Synthetic) {
    require_artifact(art(cfg, "synth.satp"), "sample");
    man.add_input(art(cfg, "synth.satp"));
    synth = datagen::load_corpus(art(cfg, "synth.satp"));
    synth_ptr = &synth;
  }
  std::vector<int> classes;
  if (cfg.augset_plan == Plan::CopyPaste) classes = object_classes(load_scene(cfg));

  augment::TrainingSet ts;
  timed(man, "assemble", [&] {
    ts = build_plan_training_set(cfg.augset_plan, real, synth_ptr, cfg.augset_r, cfg.augset_balance,
                                 mix_seed(cfg.seed, kTagAug), classes);
  });
  augment::save_training_set(ts, art(cfg, "augset"));
  man.add_artifact(art(cfg, "augset.real.satp"));
  man.add_artifact(art(cfg, "augset.synth.satp"));
  man.add_artifact(art(cfg, "augset.manifest"));
  man.add_note("plan=" + plan_name(cfg.augset_plan) + " entries=" + std::to_string(ts.pairs.size()));
  man.write();
}

void run_train_seg(const ExperimentConfig& cfg) {
  Manifest man("train-seg", cfg);
  require_artifact(art(cfg, "augset.manifest"), "build-augset");
  require_artifact(art(cfg, "val.satp"), "gen-data");
  man.add_input(art(cfg, "augset.manifest"));
  man.add_input(art(cfg, "augset.real.satp"));
  man.add_input(art(cfg, "augset.synth.satp"));
  man.add_input(art(cfg, "val.satp"));
  const augment::TrainingSet ts = augment::load_training_set(art(cfg, "augset"));
  const datagen::Corpus val = datagen::load_corpus(art(cfg, "val.satp"));

  const segment::SegConfig sc = seg_config(cfg, ts.K, mix_seed(cfg.seed, kTagSeg));
  segment::TrainResult res;
  timed(man, "train", [&] { res = segment::train_segmenter(ts, val, sc); });

  nd::save_params(art(cfg, "seg.satw"), res.params);
  write_atomic(art(cfg, "seg_log.csv"), segment::metrics_log_csv(res.log, ts.K));
  man.add_artifact(art(cfg, "seg.satw"));
  man.add_artifact(art(cfg, "seg_log.csv"));
  man.add_note("best_epoch=" + std::to_string(res.best_epoch));
  man.write();
}

void run_eval(const ExperimentConfig& cfg) {
  Manifest man("eval", cfg);
  require_artifact(art(cfg, "seg.satw"), "train-seg");
  require_artifact(art(cfg, "val.satp"), "gen-data");
  man.add_input(art(cfg, "seg.satw"));
  man.add_input(art(cfg, "val.satp"));
  const datagen::Corpus val = datagen::load_corpus(art(cfg, "val.satp"));
  if (val.pairs.empty()) throw ConfigError("val.satp holds no pairs");

  segment::SegConfig sc = seg_config(cfg, val.K, 0);
  nd::ParamStore store = segment::init_params(sc, 0);
  nd::load_params(art(cfg, "seg.satw"), store);

  segment::EvalResult er;
  timed(man, "evaluate", [&] { er = segment::evaluate(store, sc, val); });
  metrics::MetricsReport report = er.report;

  // generative metrics when a sampled pool and a real reference are present
  const bool have_synth = fs::exists(art(cfg, "synth.satp"));
  const bool have_real = fs::exists(art(cfg, "real.satp"));
  if (have_synth && have_real) {
    man.add_input(art(cfg, "synth.satp"));
    man.add_input(art(cfg, "real.satp"));
    const datagen::Corpus synth = datagen::load_corpus(art(cfg, "synth.satp"));
    const datagen::Corpus real = datagen::load_corpus(art(cfg, "real.satp"));
    if (!synth.pairs.empty() && !real.pairs.empty()) {
      report.tvd_vs_reference = metrics::tvd(metrics::class_frequency(synth),
                                             metrics::class_frequency(real));
      timed(man, "features", [&] {
        const int d_pool = sc.width(sc.depth - 1);
        metrics::FeatureSet f_val, f_synth;
        f_val.d = d_pool;
        f_synth.d = d_pool;
        std::vector<Tensor> mid_val(val.pairs.size()), mid_synth(synth.pairs.size());
        std::vector<std::vector<double>> conds(synth.pairs.size());
        for (size_t i = 0; i < val.pairs.size(); ++i) {
          segment::SegFeatures f = segment::extract_features(store, sc, val.pairs[i].image);
          f_val.add(f.pooled);
          mid_val[i] = std::move(f.mid_map);
        }
        for (size_t i = 0; i < synth.pairs.size(); ++i) {
          segment::SegFeatures f = segment::extract_features(store, sc, synth.pairs[i].image);
          f_synth.add(f.pooled);
          mid_synth[i] = std::move(f.mid_map);
          conds[i] = metrics::average_class_probs(f.softmax);
        }
        if (f_val.n() > d_pool && f_synth.n() > d_pool) {
          report.fid = metrics::fid(f_val, f_synth);
        } else {
          man.add_note("fid skipped: needs more than " + std::to_string(d_pool) +
                       " samples on each side");
        }
        const int64_t d_sp = mid_val.empty() ? 0 : static_cast<int64_t>(mid_val[0].dim(0)) * mid_val[0].dim(1);
        if (static_cast<int64_t>(mid_val.size()) > d_sp &&
            static_cast<int64_t>(mid_synth.size()) > d_sp) {
          report.sfid = metrics::sfid(mid_val, mid_synth);
        } else {
          man.add_note("sfid skipped: needs more than " + std::to_string(d_sp) +
                       " samples on each side");
        }
        report.is = metrics::inception_score(conds);
      });
    }
  }
  write_atomic(art(cfg, "eval.csv"), report.csv());
  man.add_artifact(art(cfg, "eval.csv"));
  man.write();
}

void run_ratio_sweep(const ExperimentConfig& cfg) {
  Manifest man("ratio-sweep", cfg);
  require_artifact(art(cfg, "real.satp"), "gen-data");
  require_artifact(art(cfg, "val.satp"), "gen-data");
  man.add_input(art(cfg, "real.satp"));
  man.add_input(art(cfg, "val.satp"));
  const datagen::Corpus real = datagen::load_corpus(art(cfg, "real.satp"));
  const datagen::Corpus val = datagen::load_corpus(art(cfg, "val.satp"));

  const bool wants_synth = std::count(cfg.sweep_plans.begin(), cfg.sweep_plans.end(),
                                      Plan::Synthetic) > 0;
  datagen::Corpus synth;
  if (wants_synth) {
    require_artifact(art(cfg, "synth.satp"), "sample");
    man.add_input(art(cfg, "synth.satp"));
    synth = datagen::load_corpus(art(cfg, "synth.satp"));
    const int64_t need = static_cast<int64_t>(cfg.sweep_r_grid.back()) *
                         static_cast<int64_t>(real.pairs.size());
    if (static_cast<int64_t>(synth.pairs.size()) < need)
      throw ConfigError("synthetic pool holds " + std::to_string(synth.pairs.size()) +
                        " pairs but the sweep needs " + std::to_string(need));
  }
  std::vector<int> classes;
  if (std::count(cfg.sweep_plans.begin(), cfg.sweep_plans.end(), Plan::CopyPaste) > 0)
    classes = object_classes(load_scene(cfg));

  std::ostringstream results, aggregates;
  for (size_t pi = 0; pi < cfg.sweep_plans.size(); ++pi) {
    const Plan plan = cfg.sweep_plans[pi];
    const std::string pname = plan_name(plan);
    for (int r : cfg.sweep_r_grid) {
      std::vector<double> mious;
      for (int s = 0; s < cfg.sweep_seeds; ++s) {
        const uint64_t u = mix_seed(
            mix_seed(mix_seed(mix_seed(cfg.seed, kTagSweep), static_cast<uint64_t>(pi)),
                     static_cast<uint64_t>(r)),
            static_cast<uint64_t>(s));
        double miou = 0.0;
        timed(man, pname + "_r" + std::to_string(r) + "_s" + std::to_string(s), [&] {
          const augment::TrainingSet ts =
              build_plan_training_set(plan, real, wants_synth ? &synth : nullptr, r,
                                      cfg.sweep_balance, mix_seed(u, 0), classes);
          const segment::SegConfig sc = seg_config(cfg, real.K, mix_seed(u, 1));
          const segment::TrainResult res = segment::train_segmenter(ts, val, sc);
          miou = segment::evaluate(res.params, sc, val).report.miou;
        });
        mious.push_back(miou);
        results << "result," << pname << "," << r << "," << s << "," << fmt_g9(miou) << ",\n";
      }
      double mean = 0.0;
      for (double m : mious) mean += m;
      mean /= static_cast<double>(mious.size());
      double se = 0.0;
      if (mious.size() > 1) {
        double ss = 0.0;
        for (double m : mious) ss += (m - mean) * (m - mean);
        se = std::sqrt(ss / static_cast<double>(mious.size() - 1)) /
             std::sqrt(static_cast<double>(mious.size()));
      }
      aggregates << "aggregate," << pname << "," << r << ",," << fmt_g9(mean) << "," << fmt_g9(se)
                 << "\n";
    }
  }
  write_atomic(art(cfg, "sweep.csv"),
               "kind,plan,r,seed,miou,se\n" + results.str() + aggregates.str());
  man.add_artifact(art(cfg, "sweep.csv"));
  man.write();
}

void run_ablate(const ExperimentConfig& cfg) {
  Manifest man("ablate", cfg);
  require_artifact(art(cfg, "real.satp"), "gen-data");
  require_artifact(art(cfg, "val.satp"), "gen-data");
  man.add_input(art(cfg, "real.satp"));
  man.add_input(art(cfg, "val.satp"));
  const datagen::Corpus real = datagen::load_corpus(art(cfg, "real.satp"));
  const datagen::Corpus val = datagen::load_corpus(art(cfg, "val.satp"));
  if (real.pairs.empty()) throw ConfigError("real.satp holds no pairs");

  const std::vector<std::pair<Encoding, PredictionMode>> variants = {
      {Encoding::OneHot, PredictionMode::Epsilon},
      {Encoding::Bits, PredictionMode::X0},
      {Encoding::Bits, PredictionMode::Epsilon},
  };
  const std::vector<int> r_grid = {1, 3};
  const int pool_size = r_grid.back() * static_cast<int>(real.pairs.size());

  std::ostringstream rows;
  for (size_t vi = 0; vi < variants.size(); ++vi) {
    const Encoding enc = variants[vi].first;
    const PredictionMode pred = variants[vi].second;
    const uint64_t vseed = mix_seed(mix_seed(cfg.seed, kTagAblate), vi);
    const std::string vtag = encoding_name(enc) + "_" + predict_name(pred);

    std::vector<Tensor> dataset;
    dataset.reserve(real.pairs.size());
    for (const auto& pair : real.pairs) dataset.push_back(pack(pair, real.K, enc));

    denoiser::DenoiserConfig dcfg;
    dcfg.in_channels = joint_channels_of(real.K, enc);
    dcfg.base_width = cfg.diff_base_width;
    dcfg.depth = cfg.diff_depth;
    dcfg.time_embed_dim = cfg.diff_time_dim;
    const diffusion::NoiseSchedule sched = diffusion::linear_schedule(cfg.diff_t);
    diffusion::SamplerConfig scfg;
    scfg.prediction = pred;
    diffusion::TrainConfig tcfg;
    tcfg.batch = cfg.diff_batch;
    tcfg.steps = cfg.diff_steps;
    tcfg.lr = static_cast<float>(cfg.diff_lr);
    tcfg.seed = mix_seed(vseed, 0);
    tcfg.ema_decay = static_cast<float>(cfg.diff_ema);

    nd::ParamStore params;
    RngStream init_rng(mix_seed(tcfg.seed, 1));
    denoiser::init_params(params, dcfg, init_rng);
    std::vector<diffusion::LossRecord> log;
    timed(man, vtag + "_train", [&] {
      diffusion::train_diffusion(dataset, nullptr, params, dcfg, tcfg, scfg, sched, log);
    });

    datagen::Corpus pool;
    pool.K = real.K;
    timed(man, vtag + "_sample", [&] {
      RngStream rng(mix_seed(vseed, 1));
      const std::vector<Tensor> joints =
          diffusion::sample_joint(params, dcfg, pool_size, real.pairs[0].height(),
                                  real.pairs[0].width(), scfg, sched, rng);
      for (const auto& j : joints) pool.pairs.push_back(unpack(j, real.K, enc));
    });

    for (int r : r_grid) {
      double miou = 0.0;
      timed(man, vtag + "_seg_r" + std::to_string(r), [&] {
        const augment::TrainingSet ts = build_plan_training_set(
            Plan::Synthetic, real, &pool, r, cfg.sweep_balance, mix_seed(vseed, 10 + static_cast<uint64_t>(r)), {});
        const segment::SegConfig sc =
            seg_config(cfg, real.K, mix_seed(vseed, 20 + static_cast<uint64_t>(r)));
        const segment::TrainResult res = segment::train_segmenter(ts, val, sc);
        miou = segment::evaluate(res.params, sc, val).report.miou;
      });
      rows << encoding_name(enc) << "," << predict_name(pred) << "," << r << "," << fmt_g9(miou)
           << "\n";
    }
  }
  write_atomic(art(cfg, "ablate.csv"), "encoding,predict,r,miou\n" + rows.str());
  man.add_artifact(art(cfg, "ablate.csv"));
  man.write();
}

void run_report(const ExperimentConfig& cfg) {
  Manifest man("report", cfg);
  require_artifact(art(cfg, "sweep.csv"), "ratio-sweep");
  man.add_input(art(cfg, "sweep.csv"));
  const std::string text = read_file(art(cfg, "sweep.csv"), "ratio-sweep");
  std::string svg;
  timed(man, "render", [&] { svg = render_sweep_svg(parse_sweep_csv(text)); });
  write_atomic(art(cfg, "report.svg"), svg);
  man.add_artifact(art(cfg, "report.svg"));
  man.write();
}

}  // namespace

const std::vector<std::string>& subcommand_names() {
  static const std::vector<std::string> names = {
      "gen-data",     "train-diff", "sample", "train-sr",    "superres", "build-augset",
      "train-seg",    "eval",       "ratio-sweep", "ablate", "report"};
  return names;
}

void run_subcommand(const std::string& name, const ExperimentConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  if (name == "gen-data") run_gen_data(cfg);
  else if (name == "train-diff") run_train_diff(cfg);
  else if (name == "sample") run_sample(cfg);
  else if (name == "train-sr") run_train_sr(cfg);
  else if (name == "superres") run_superres(cfg);
  else if (name == "build-augset") run_build_augset(cfg);
  else if (name == "train-seg") run_train_seg(cfg);
  else if (name == "eval") run_eval(cfg);
  else if (name == "ratio-sweep") run_ratio_sweep(cfg);
  else if (name == "ablate") run_ablate(cfg);
  else if (name == "report") run_report(cfg);
  else throw ConfigError("unknown subcommand '" + name + "'");
}

// ---------------------------------------------------------------------------
// sweep CSV parsing and SVG rendering

namespace {

[[noreturn]] void csv_fail(size_t line_no, const std::string& why) {
  throw FormatError("sweep csv line " + std::to_string(line_no) + ": " + why);
}

double csv_num(size_t line_no, const std::string& field, const std::string& v) {
  if (v.empty()) csv_fail(line_no, field + " is empty");
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || !std::isfinite(d))
    csv_fail(line_no, field + " is not a number: '" + v + "'");
  return d;
}

long long csv_int(size_t line_no, const std::string& field, const std::string& v) {
  if (v.empty()) csv_fail(line_no, field + " is empty");
  char* end = nullptr;
  const long long i = std::strtoll(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size()) csv_fail(line_no, field + " is not an integer: '" + v + "'");
  return i;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

}  // namespace

std::vector<SweepSeries> parse_sweep_csv(const std::string& text) {
  std::vector<std::string> lines;
  size_t from = 0;
  while (from <= text.size()) {
    const size_t to = text.find('\n', from);
    if (to == std::string::npos) {
      if (from < text.size()) lines.push_back(text.substr(from));
      break;
    }
    lines.push_back(text.substr(from, to - from));
    from = to + 1;
  }
  if (lines.empty() || lines[0] != "kind,plan,r,seed,miou,se")
    csv_fail(1, "expected header 'kind,plan,r,seed,miou,se'");

  std::vector<SweepSeries> series;
  auto series_for = [&](const std::string& plan) -> SweepSeries& {
    for (auto& s : series) {
      if (s.plan == plan) return s;
    }
    series.push_back({plan, {}});
    return series.back();
  };

  for (size_t i = 1; i < lines.size(); ++i) {
    const size_t line_no = i + 1;
    const std::string& line = lines[i];
    if (line.empty()) csv_fail(line_no, "empty line");
    const std::vector<std::string> f = split(line, ',');
    if (f.size() != 6) csv_fail(line_no, "expected 6 fields, got " + std::to_string(f.size()));
    if (f[1].empty()) csv_fail(line_no, "plan is empty");
    const long long r = csv_int(line_no, "r", f[2]);
    if (r < 0 || r > 5) csv_fail(line_no, "r out of [0, 5]");
    const double miou = csv_num(line_no, "miou", f[4]);
    if (f[0] == "result") {
      if (csv_int(line_no, "seed", f[3]) < 0) csv_fail(line_no, "seed is negative");
      if (!f[5].empty()) csv_fail(line_no, "result rows must leave se empty");
      (void)miou;
    } else if (f[0] == "aggregate") {
      if (!f[3].empty()) csv_fail(line_no, "aggregate rows must leave seed empty");
      const double se = csv_num(line_no, "se", f[5]);
      if (se < 0) csv_fail(line_no, "se is negative");
      series_for(f[1]).points.push_back({static_cast<int>(r), miou, se});
    } else {
      csv_fail(line_no, "kind must be result or aggregate, got '" + f[0] + "'");
    }
  }
  return series;
}

std::string render_sweep_svg(const std::vector<SweepSeries>& series) {
  // fixed domains: R in [0, 5], mIoU in [0, 1]; data-independent layout
  const double x0 = 70, x1 = 610, y0 = 40, y1 = 380;
  auto px = [&](double r) { return x0 + (r + 0.5) / 6.0 * (x1 - x0); };
  auto py = [&](double v) { return y1 - std::min(std::max(v, 0.0), 1.0) * (y1 - y0); };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"440\" "
        "viewBox=\"0 0 640 440\" font-family=\"monospace\" font-size=\"12\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"640\" height=\"440\" fill=\"#ffffff\"/>\n";
  // axes
  os << "<line x1=\"" << fmt_f2(x0) << "\" y1=\"" << fmt_f2(y1) << "\" x2=\"" << fmt_f2(x1)
     << "\" y2=\"" << fmt_f2(y1) << "\" stroke=\"#000000\"/>\n";
  os << "<line x1=\"" << fmt_f2(x0) << "\" y1=\"" << fmt_f2(y0) << "\" x2=\"" << fmt_f2(x0)
     << "\" y2=\"" << fmt_f2(y1) << "\" stroke=\"#000000\"/>\n";
  for (int r = 0; r <= 5; ++r) {
    const double x = px(r);
    os << "<line x1=\"" << fmt_f2(x) << "\" y1=\"" << fmt_f2(y1) << "\" x2=\"" << fmt_f2(x)
       << "\" y2=\"" << fmt_f2(y1 + 6) << "\" stroke=\"#000000\"/>\n";
    os << "<text x=\"" << fmt_f2(x) << "\" y=\"" << fmt_f2(y1 + 20)
       << "\" text-anchor=\"middle\">" << r << "</text>\n";
  }
  for (int i = 0; i <= 5; ++i) {
    const double v = i / 5.0;
    const double y = py(v);
    os << "<line x1=\"" << fmt_f2(x0 - 6) << "\" y1=\"" << fmt_f2(y) << "\" x2=\"" << fmt_f2(x0)
       << "\" y2=\"" << fmt_f2(y) << "\" stroke=\"#000000\"/>\n";
    os << "<text x=\"" << fmt_f2(x0 - 10) << "\" y=\"" << fmt_f2(y + 4)
       << "\" text-anchor=\"end\">" << fmt_f2(v).substr(0, 3) << "</text>\n";
  }
  os << "<text x=\"" << fmt_f2((x0 + x1) / 2) << "\" y=\"425\" text-anchor=\"middle\">"
     << "R (synthetic pairs per real pair)</text>\n";
  os << "<text x=\"18\" y=\"" << fmt_f2((y0 + y1) / 2) << "\" text-anchor=\"middle\" "
     << "transform=\"rotate(-90 18 " << fmt_f2((y0 + y1) / 2) << ")\">val mIoU</text>\n";

  for (size_t si = 0; si < series.size(); ++si) {
    const char* color = kColors[si % 5];
    const auto& pts = series[si].points;
    // error bars
    for (const auto& p : pts) {
      if (p.se <= 0) continue;
      const double x = px(p.r), ya = py(p.mean - p.se), yb = py(p.mean + p.se);
      os << "<line class=\"err\" x1=\"" << fmt_f2(x) << "\" y1=\"" << fmt_f2(ya) << "\" x2=\""
         << fmt_f2(x) << "\" y2=\"" << fmt_f2(yb) << "\" stroke=\"" << color << "\"/>\n";
      os << "<line class=\"err\" x1=\"" << fmt_f2(x - 4) << "\" y1=\"" << fmt_f2(ya) << "\" x2=\""
         << fmt_f2(x + 4) << "\" y2=\"" << fmt_f2(ya) << "\" stroke=\"" << color << "\"/>\n";
      os << "<line class=\"err\" x1=\"" << fmt_f2(x - 4) << "\" y1=\"" << fmt_f2(yb) << "\" x2=\""
         << fmt_f2(x + 4) << "\" y2=\"" << fmt_f2(yb) << "\" stroke=\"" << color << "\"/>\n";
    }
    if (pts.size() >= 2) {
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (size_t i = 0; i < pts.size(); ++i) {
        os << (i ? " " : "") << fmt_f2(px(pts[i].r)) << "," << fmt_f2(py(pts[i].mean));
      }
      os << "\"/>\n";
    }
    for (const auto& p : pts) {
      os << "<circle cx=\"" << fmt_f2(px(p.r)) << "\" cy=\"" << fmt_f2(py(p.mean))
         << "\" r=\"4\" fill=\"" << color << "\"/>\n";
    }
    os << "<rect x=\"480\" y=\"" << fmt_f2(y0 + 10 + 18.0 * static_cast<double>(si))
       << "\" width=\"12\" height=\"12\" fill=\"" << color << "\"/>\n";
    os << "<text x=\"498\" y=\"" << fmt_f2(y0 + 20 + 18.0 * static_cast<double>(si)) << "\">"
       << xml_escape(series[si].plan) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace pairdiff::experiment
