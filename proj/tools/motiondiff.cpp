// Copyright 2026 The motiondiff Authors
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

// motiondiff command-line tool.
//
// Every tunable is a named setting with a typed default. A value comes from
// the command-line flag if given, else from the JSON config file (--config,
// or the file named by MOTION_DIFFUSE_CONFIG), else the default. Config
// files are flat objects of setting names; unknown names are rejected.
//
// Exit codes: 0 success, 2 invalid input or configuration, 3 file or data
// error, 4 numeric failure.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "motiondiff.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace motiondiff;

namespace {

using Scalar = float;

enum ExitCode { kOk = 0, kInvalid = 2, kIo = 3, kNumeric = 4 };

struct SettingSpec {
  json fallback;
  std::string help;
};

// Every setting any subcommand understands. Config files may mention any of
// them; each subcommand reads only its own.
const std::map<std::string, SettingSpec>& registry() {
  static const std::map<std::string, SettingSpec> r = {
      // model
      {"d_model", {768, "denoiser width"}},
      {"n_layers", {8, "denoiser decoder layers"}},
      {"n_heads", {8, "attention heads"}},
      {"d_ff", {2048, "feedforward width"}},
      {"dropout", {0.1, "dropout probability"}},
      {"max_frames", {471, "longest supported motion"}},
      {"max_ctx_tokens", {20, "cross-attention text tokens"}},
      {"d_text", {768, "text embedding width"}},
      {"vocab", {4096, "toy text encoder vocabulary"}},
      {"max_words", {20, "words kept per prompt"}},
      {"diffusion_steps", {1000, "diffusion steps T"}},
      {"schedule_offset", {0.008, "cosine schedule offset"}},
      {"input_skip", {false, "gated input-to-output skip (narrow models)"}},
      // training
      {"lr", {1e-4, "learning rate"}},
      {"weight_decay", {1e-4, "decoupled weight decay"}},
      {"beta1", {0.9, "Adam beta1"}},
      {"beta2", {0.999, "Adam beta2"}},
      {"adam_eps", {1e-8, "Adam epsilon"}},
      {"lambda", {1e-3, "variational loss weight"}},
      {"ema_decay", {0.99, "EMA decay"}},
      {"ema_interval", {10, "steps between EMA updates"}},
      {"null_text_prob", {0.25, "probability of replacing a prompt with the null text"}},
      {"total_steps", {10000, "training steps"}},
      {"batch_size", {32, "batch size"}},
      {"freeze_text", {false, "keep text embeddings fixed"}},
      {"grad_clip", {1.0, "global gradient-norm bound (0 = off)"}},
      {"clip_length", {128, "training clip length in frames"}},
      {"clip_stride", {32, "sliding-window offset for long motions"}},
      {"log_every", {100, "steps between metric log lines"}},
      {"checkpoint_every", {0, "steps between checkpoints (0 = end only)"}},
      {"model_seed", {0, "weight initialization seed"}},
      // sampling
      {"frames", {128, "frames to generate"}},
      {"sampling_steps", {0, "reverse steps K (0 = all T)"}},
      {"guidance", {8.0, "classifier-free guidance scale"}},
      {"method", {"ddpm", "ddpm or ddim"}},
      {"ddim_eta", {0.0, "DDIM stochasticity"}},
      {"use_ema", {true, "sample with EMA weights"}},
      {"count", {1, "samples to generate"}},
      // evaluation
      {"multimodality_samples", {10, "samples per set for multimodality (0 = skip)"}},
      {"candidates", {32, "R-precision candidates per motion"}},
      // synthetic data
      {"classes", {8, "motion families"}},
      {"per_class", {32, "samples per family"}},
      {"min_frames", {64, "shortest synthetic motion"}},
      {"max_frames_data", {128, "longest synthetic motion"}},
      {"jitter", {0.1, "per-sample parameter jitter"}},
      {"fps", {20.0, "frame rate"}},
      // feature extractor
      {"extractor_d_model", {512, "extractor motion encoder width"}},
      {"extractor_layers", {6, "extractor motion encoder layers"}},
      {"extractor_heads", {8, "extractor attention heads"}},
      {"extractor_d_ff", {768, "extractor feedforward width"}},
      {"extractor_dropout", {0.1, "extractor dropout"}},
      {"extractor_d_feat", {512, "feature width"}},
      {"extractor_d_word", {512, "extractor word embedding width"}},
      {"extractor_max_frames", {471, "extractor longest motion"}},
      {"temperature", {0.07, "InfoNCE temperature"}},
      {"extractor_steps", {2000, "extractor training steps"}},
      {"extractor_lr", {1e-4, "extractor learning rate"}},
      // shared
      {"seed", {0, "master seed"}},
      {"jobs", {1, "worker threads"}},
  };
  return r;
}

std::string flag_name(const std::string& key) {
  std::string f = "--";
  for (char c : key) f += c == '_' ? '-' : c;
  return f;
}

// Flag values as typed by the user, plus the resolved view.
class Settings {
 public:
  void expose(CLI::App* app, const std::vector<std::string>& keys) {
    for (const auto& k : keys) {
      const auto& spec = registry().at(k);
      keys_.push_back(k);
      if (spec.fallback.is_boolean()) {
        auto* o = app->add_option(flag_name(k), raw_[k], spec.help + " (true/false)");
        o->type_name("BOOL");
      } else {
        app->add_option(flag_name(k), raw_[k], spec.help);
      }
    }
  }

  void set_file(const json& file, const std::string& source) {
    file_ = file;
    source_ = source;
  }

  /// Resolves every exposed key and reports where each value came from.
  void resolve(std::ostream& report) {
    for (const auto& k : keys_) {
      const auto& spec = registry().at(k);
      std::string origin = "default";
      json v = spec.fallback;
      if (file_.contains(k)) {
        v = file_.at(k);
        origin = source_;
      }
      if (auto it = raw_.find(k); it != raw_.end() && !it->second.empty()) {
        v = parse_flag(k, it->second, spec.fallback);
        origin = "flag";
      }
      values_[k] = v;
      report << "  " << k << " = " << v.dump() << "  (" << origin << ")\n";
    }
  }

  template <class T>
  T get(const std::string& k) const {
    return values_.at(k).get<T>();
  }

 private:
  static json parse_flag(const std::string& k, const std::string& s, const json& fallback) {
    try {
      if (fallback.is_boolean()) {
        if (s == "true" || s == "1") return true;
        if (s == "false" || s == "0") return false;
        throw ConfigError("");
      }
      std::size_t used = 0;
      if (fallback.is_number_integer()) {
        const long long v = std::stoll(s, &used);
        if (used != s.size()) throw ConfigError("");
        return v;
      }
      if (fallback.is_number()) {
        const double v = std::stod(s, &used);
        if (used != s.size()) throw ConfigError("");
        return v;
      }
      return s;
    } catch (const std::exception&) {
      throw ConfigError("invalid value '" + s + "' for " + flag_name(k));
    }
  }

  std::vector<std::string> keys_;
  std::map<std::string, std::string> raw_;
  json file_ = json::object();
  std::string source_;
  std::map<std::string, json> values_;
};

/// Reads a flat config object; names and value types are checked against
/// the registry.
json load_config_file(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = read_json_file(path);
  } catch (const Error& e) {
    throw ConfigError(std::string("cannot read config file: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError(path.string() + ": config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    auto it = registry().find(k);
    if (it == registry().end()) throw ConfigError(path.string() + ": unknown config key '" + k + "'");
    const json& d = it->second.fallback;
    const bool ok = (d.is_boolean() && v.is_boolean()) || (d.is_number_integer() && v.is_number_integer()) ||
                    (d.is_number_float() && v.is_number()) || (d.is_string() && v.is_string());
    if (!ok) throw ConfigError(path.string() + ": config key '" + k + "' has the wrong type (expected " + d.type_name() + ")");
  }
  return j;
}

ModelConfig model_config(const Settings& s) {
  ModelConfig c;
  c.denoiser.d_model = s.get<Index>("d_model");
  c.denoiser.n_layers = s.get<int>("n_layers");
  c.denoiser.n_heads = s.get<int>("n_heads");
  c.denoiser.d_ff = s.get<Index>("d_ff");
  c.denoiser.dropout = s.get<double>("dropout");
  c.denoiser.max_frames = s.get<Index>("max_frames");
  c.denoiser.max_ctx_tokens = s.get<Index>("max_ctx_tokens");
  c.denoiser.d_text = s.get<Index>("d_text");
  c.denoiser.input_skip = s.get<bool>("input_skip");
  c.text.dim = c.denoiser.d_text;
  c.text.vocab = s.get<Index>("vocab");
  c.text.max_words = s.get<Index>("max_words");
  c.diffusion_steps = s.get<int>("diffusion_steps");
  c.schedule_offset = s.get<double>("schedule_offset");
  c.validate();
  return c;
}

TrainConfig train_config(const Settings& s) {
  TrainConfig c;
  c.lr = s.get<double>("lr");
  c.weight_decay = s.get<double>("weight_decay");
  c.beta1 = s.get<double>("beta1");
  c.beta2 = s.get<double>("beta2");
  c.adam_eps = s.get<double>("adam_eps");
  c.lambda = s.get<double>("lambda");
  c.ema_decay = s.get<double>("ema_decay");
  c.ema_interval = s.get<int>("ema_interval");
  c.null_text_prob = s.get<double>("null_text_prob");
  c.total_steps = s.get<int>("total_steps");
  c.batch_size = s.get<int>("batch_size");
  c.seed = s.get<std::uint64_t>("seed");
  c.freeze_text = s.get<bool>("freeze_text");
  c.grad_clip = s.get<double>("grad_clip");
  c.clip_length = s.get<Index>("clip_length");
  c.clip_stride = s.get<Index>("clip_stride");
  c.validate();
  return c;
}

SampleSpec sample_spec(const Settings& s) {
  SampleSpec p;
  p.length = s.get<Index>("frames");
  p.steps = s.get<int>("sampling_steps");
  p.guidance_scale = s.get<double>("guidance");
  p.method = parse_sampler_method(s.get<std::string>("method"));
  p.ddim_eta = s.get<double>("ddim_eta");
  p.seed = s.get<std::uint64_t>("seed");
  return p;
}

const std::vector<std::string> kModelKeys = {"d_model", "n_layers",  "n_heads", "d_ff",      "dropout",
                                             "max_frames", "max_ctx_tokens", "d_text", "vocab", "max_words",
                                             "diffusion_steps", "schedule_offset", "input_skip", "model_seed"};
const std::vector<std::string> kTrainKeys = {"lr",           "weight_decay", "beta1",          "beta2",
                                             "adam_eps",     "lambda",       "ema_decay",      "ema_interval",
                                             "null_text_prob", "total_steps", "batch_size",    "freeze_text",
                                             "grad_clip",    "clip_length",  "clip_stride",    "log_every",
                                             "checkpoint_every", "seed"};
const std::vector<std::string> kSampleKeys = {"frames", "sampling_steps", "guidance", "method", "ddim_eta",
                                              "use_ema", "seed", "jobs"};
const std::vector<std::string> kExtractorKeys = {
    "extractor_d_model", "extractor_layers", "extractor_heads",    "extractor_d_ff", "extractor_dropout",
    "extractor_d_feat",  "extractor_d_word", "extractor_max_frames", "vocab",        "max_words",
    "temperature",       "extractor_steps",  "extractor_lr",       "batch_size",     "clip_length",
    "clip_stride",       "seed"};

std::vector<std::string> join(std::initializer_list<std::vector<std::string>> parts) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& p : parts)
    for (const auto& k : p)
      if (seen.insert(k).second) out.push_back(k);
  return out;
}

std::shared_ptr<const EmbeddingStore<Scalar>> maybe_embeddings(const std::string& path) {
  if (path.empty()) return nullptr;
  return std::make_shared<const EmbeddingStore<Scalar>>(EmbeddingStore<Scalar>::load(path));
}

fs::path sidecar_path(const fs::path& out) {
  fs::path p = out;
  p.replace_extension(".pos.json");
  return p;
}

fs::path numbered(const fs::path& out, int i, int count) {
  if (count == 1) return out;
  char suffix[32];
  std::snprintf(suffix, sizeof(suffix), "_%03d", i);
  return out.parent_path() / (out.stem().string() + suffix + out.extension().string());
}

void write_motion(const MotionSequence& m, const fs::path& out, bool sidecar) {
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_motion(m, out);
  if (sidecar) save_positions_sidecar(m, sidecar_path(out));
}

// ---------------------------------------------------------------------------

int run_make_synthetic(const Settings& s, const std::string& out) {
  const int classes = s.get<int>("classes");
  if (classes < 2 || classes > static_cast<int>(kAllFamilies.size()))
    throw ConfigError("--classes must lie in [2, " + std::to_string(kAllFamilies.size()) + "]");
  DatasetSpec spec;
  spec.classes.assign(kAllFamilies.begin(), kAllFamilies.begin() + classes);
  spec.samples_per_class = s.get<int>("per_class");
  spec.min_frames = s.get<Index>("min_frames");
  spec.max_frames = s.get<Index>("max_frames_data");
  spec.jitter = s.get<double>("jitter");
  spec.fps = s.get<double>("fps");
  spec.seed = s.get<std::uint64_t>("seed");
  spec.validate();
  const auto data = generate_synthetic(spec);
  write_dataset(data, out);
  std::set<std::string> prompts;
  for (const auto& d : data) prompts.insert(d.text);
  std::cout << "wrote " << data.size() << " motions (" << classes << " classes x " << spec.samples_per_class << ", "
            << prompts.size() << " distinct prompts) to " << out << "\n";
  return kOk;
}

int run_train(const Settings& s, const std::string& data_dir, const std::string& out, const std::string& resume,
              const std::string& log_path, const std::string& embeddings) {
  const auto data = load_dataset(data_dir);
  TrainingState<Scalar> st;
  if (!resume.empty()) {
    st = load_checkpoint<Scalar>(resume);
    st.config.total_steps = s.get<int>("total_steps");
    st.config.validate();
    std::cout << "resuming " << resume << " at step " << st.step << "\n";
  } else {
    const TrainConfig tc = train_config(s);
    MotionModel<Scalar> model(model_config(s), s.get<std::uint64_t>("model_seed"));
    model.set_normalizer(fit_normalizer(data, tc.clip_length, tc.clip_stride));
    st = TrainingState<Scalar>(std::move(model), tc);
  }
  st.model.set_embedding_store(maybe_embeddings(embeddings));
  const auto examples = prepare_examples<Scalar>(data, st.model.normalizer(), st.config.clip_length, st.config.clip_stride);
  std::cout << "training on " << examples.size() << " clips, " << st.model.parameter_count() << " parameters\n";

  const fs::path log_file = log_path.empty() ? fs::path(out + ".log.jsonl") : fs::path(log_path);
  std::ofstream log(log_file, resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot write metric log " + log_file.string());
  const int log_every = std::max(1, s.get<int>("log_every"));
  const int ckpt_every = s.get<int>("checkpoint_every");
  const auto start = std::chrono::steady_clock::now();
  double simple = 0, vlb = 0, hybrid = 0;
  int window = 0;
  train(st, examples, [&](const StepReport& r) {
    simple += r.loss.simple;
    vlb += r.loss.vlb;
    hybrid += r.loss.hybrid;
    ++window;
    if (r.step % log_every == 0 || r.step == st.config.total_steps) {
      StepReport mean = r;
      mean.loss.simple = simple / window;
      mean.loss.vlb = vlb / window;
      mean.loss.hybrid = hybrid / window;
      json line = to_json(mean, st.config.lr);
      line["elapsed_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log << line.dump() << "\n" << std::flush;
      std::cout << "step " << r.step << "  simple " << mean.loss.simple << "  vlb " << mean.loss.vlb << "\n";
      simple = vlb = hybrid = 0;
      window = 0;
    }
    if (ckpt_every > 0 && r.step % ckpt_every == 0) save_checkpoint(st, out);
  });
  save_checkpoint(st, out);
  std::cout << "saved " << out << " at step " << st.step << "\n";
  return kOk;
}

MotionModel<Scalar> open_model(const std::string& ckpt, bool use_ema, const std::string& embeddings) {
  MotionModel<Scalar> m = load_model<Scalar>(ckpt, use_ema);
  m.set_embedding_store(maybe_embeddings(embeddings));
  return m;
}

int run_sample(const Settings& s, const std::string& ckpt, const std::string& text, const std::string& out, bool sidecar,
               const std::string& embeddings) {
  const MotionModel<Scalar> model = open_model(ckpt, s.get<bool>("use_ema"), embeddings);
  SampleSpec base = sample_spec(s);
  base.validate(model.schedule().steps(), model.config().denoiser.max_frames);
  const int count = s.get<int>("count");
  if (count < 1) throw ConfigError("--count must be >= 1");
  const TextContext<Scalar> ctx = model.encode_text(text);
  std::vector<MotionSequence> results(static_cast<std::size_t>(count));
  parallel_for(results.size(), s.get<int>("jobs"), [&](std::size_t i) {
    SampleSpec spec = base;
    // A single sample uses the seed directly; batches split it per job.
    if (count > 1) spec.seed = sample_seed(base.seed, i);
    results[i] = sample(model, ctx, spec);
  });
  for (int i = 0; i < count; ++i) {
    const fs::path p = numbered(out, i, count);
    write_motion(results[static_cast<std::size_t>(i)], p, sidecar);
    std::cout << "wrote " << p.string() << "\n";
  }
  return kOk;
}

int run_edit(const Settings& s, const std::string& ckpt, const std::string& ref_path, const std::string& mask_path,
             const std::string& text, const std::string& out, Index predict_after, Index keep_head, Index keep_tail,
             const std::string& joints, bool sidecar, const std::string& embeddings) {
  const MotionModel<Scalar> model = open_model(ckpt, s.get<bool>("use_ema"), embeddings);
  const MotionSequence ref = load_motion(ref_path, static_cast<int>(model.config().denoiser.d_motion));
  const int modes = !mask_path.empty() + (predict_after > 0) + (keep_head > 0 || keep_tail > 0) + !joints.empty();
  if (modes != 1)
    throw ConfigError("choose exactly one of --mask, --predict-after, --keep-head/--keep-tail, --keep-joints");
  EditMask mask;
  if (!mask_path.empty()) {
    mask = load_mask(mask_path, ref);
  } else if (predict_after > 0) {
    mask = prediction_mask(ref, predict_after);
  } else if (keep_head > 0 || keep_tail > 0) {
    mask = inbetween_mask(ref, keep_head, keep_tail);
  } else if (joints == "lower_body") {
    mask = joint_mask(ref, lower_body_joints());
  } else {
    throw ConfigError("unknown joint preset '" + joints + "' (expected lower_body)");
  }
  SampleSpec spec = sample_spec(s);
  const MotionSequence result = edit(model, ref, mask, model.encode_text(text), spec);
  write_motion(result, out, sidecar);
  std::cout << "wrote " << out << " (" << mask.preserved() << " of " << mask.grid.size() << " entries preserved)\n";
  return kOk;
}

ExtractorConfig extractor_config(const Settings& s) {
  ExtractorConfig c;
  c.d_model = s.get<Index>("extractor_d_model");
  c.n_layers = s.get<int>("extractor_layers");
  c.n_heads = s.get<int>("extractor_heads");
  c.d_ff = s.get<Index>("extractor_d_ff");
  c.dropout = s.get<double>("extractor_dropout");
  c.d_feat = s.get<Index>("extractor_d_feat");
  c.d_word = s.get<Index>("extractor_d_word");
  c.max_frames = s.get<Index>("extractor_max_frames");
  c.vocab = s.get<Index>("vocab");
  c.max_words = s.get<Index>("max_words");
  c.temperature = s.get<double>("temperature");
  c.validate();
  return c;
}

int run_train_extractor(const Settings& s, const std::string& data_dir, const std::string& out) {
  const auto data = load_dataset(data_dir);
  ExtractorTrainConfig tc;
  tc.optimizer.lr = s.get<double>("extractor_lr");
  tc.steps = s.get<int>("extractor_steps");
  tc.batch_size = s.get<int>("batch_size");
  tc.seed = s.get<std::uint64_t>("seed");
  tc.clip_length = s.get<Index>("clip_length");
  tc.clip_stride = s.get<Index>("clip_stride");
  const int every = std::max(1, tc.steps / 10);
  const auto fx = train_feature_extractor<Scalar>(data, extractor_config(s), tc, [&](int step, double loss) {
    if (step % every == 0 || step == tc.steps) std::cout << "step " << step << "  infonce " << loss << "\n";
  });
  save_extractor(fx, out);
  std::cout << "saved " << out << "\n";
  return kOk;
}

int run_eval(const Settings& s, const std::string& ckpt, const std::string& extractor, const std::string& data_dir,
             const std::string& out, const std::string& embeddings) {
  if (extractor.empty() || !fs::exists(extractor))
    throw IoError("feature extractor '" + extractor +
                  "' not found; run `motiondiff train-extractor --data DIR --out FILE` first and pass it via --extractor");
  const auto fx = load_extractor<Scalar>(extractor);
  const MotionModel<Scalar> model = open_model(ckpt, s.get<bool>("use_ema"), embeddings);
  const auto data = load_dataset(data_dir);
  EvalOptions opt;
  opt.sampling = sample_spec(s);
  opt.seed = s.get<std::uint64_t>("seed");
  opt.multimodality_samples = s.get<int>("multimodality_samples");
  opt.candidates = s.get<int>("candidates");
  opt.jobs = s.get<int>("jobs");
  const MetricReport report = evaluate(model, fx, data, opt);
  json j = to_json(report);
  j["checkpoint"] = ckpt;
  j["extractor"] = extractor;
  write_text_file(out, j.dump(2) + "\n");
  std::cout << format_table(report);
  std::cout << "wrote " << out << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-conditioned motion diffusion: synthetic data, training, sampling, editing and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();  // lets --config appear after the subcommand
  std::string config_path;
  app.add_option("--config", config_path, "flat JSON config file (default: $MOTION_DIFFUSE_CONFIG)");

  Settings settings;
  std::string out, data_dir, ckpt, text, ref, mask, resume, log_path, extractor, embeddings, joints;
  Index predict_after = 0, keep_head = 0, keep_tail = 0;
  bool sidecar = false;

  auto* mk = app.add_subcommand("make-synthetic", "generate the synthetic text/motion dataset");
  mk->add_option("--out", out, "output directory")->required();
  settings.expose(mk, {"classes", "per_class", "min_frames", "max_frames_data", "jitter", "fps", "seed"});

  auto* tr = app.add_subcommand("train", "train the diffusion model");
  tr->add_option("--data", data_dir, "dataset directory")->required();
  tr->add_option("--out", out, "checkpoint path")->required();
  tr->add_option("--resume", resume, "continue from this checkpoint");
  tr->add_option("--log", log_path, "JSONL metric log (default: <out>.log.jsonl)");
  tr->add_option("--embeddings", embeddings, "JSONL text embedding file");
  settings.expose(tr, join({kModelKeys, kTrainKeys}));

  auto* sm = app.add_subcommand("sample", "generate motion from text");
  sm->add_option("--ckpt", ckpt, "checkpoint")->required();
  sm->add_option("--text", text, "prompt (empty = unconditional)");
  sm->add_option("--out", out, "output motion JSON")->required();
  sm->add_flag("--sidecar", sidecar, "also write joint positions to <out>.pos.json");
  sm->add_option("--embeddings", embeddings, "JSONL text embedding file");
  settings.expose(sm, join({kSampleKeys, {"count"}}));

  auto* ed = app.add_subcommand("edit", "regenerate the masked part of a motion");
  ed->add_option("--ckpt", ckpt, "checkpoint")->required();
  ed->add_option("--ref", ref, "reference motion JSON")->required();
  ed->add_option("--mask", mask, "mask JSON (1 = keep)");
  ed->add_option("--predict-after", predict_after, "keep the first N frames, generate the rest");
  ed->add_option("--keep-head", keep_head, "in-betweening: keep the first A frames");
  ed->add_option("--keep-tail", keep_tail, "in-betweening: keep the last B frames");
  ed->add_option("--keep-joints", joints, "joint preset to keep (lower_body)");
  ed->add_option("--text", text, "prompt for the edited part");
  ed->add_option("--out", out, "output motion JSON")->required();
  ed->add_flag("--sidecar", sidecar, "also write joint positions to <out>.pos.json");
  ed->add_option("--embeddings", embeddings, "JSONL text embedding file");
  settings.expose(ed, {"sampling_steps", "guidance", "method", "ddim_eta", "use_ema", "seed"});

  auto* tx = app.add_subcommand("train-extractor", "train the contrastive feature extractor used by eval");
  tx->add_option("--data", data_dir, "dataset directory")->required();
  tx->add_option("--out", out, "extractor checkpoint path")->required();
  settings.expose(tx, kExtractorKeys);

  auto* ev = app.add_subcommand("eval", "compute the metric report");
  ev->add_option("--ckpt", ckpt, "checkpoint")->required();
  ev->add_option("--extractor", extractor, "feature extractor checkpoint (from train-extractor)");
  ev->add_option("--data", data_dir, "annotated reference motions")->required();
  ev->add_option("--out", out, "report JSON")->required();
  ev->add_option("--embeddings", embeddings, "JSONL text embedding file");
  settings.expose(ev, {"sampling_steps", "guidance", "method", "ddim_eta", "use_ema", "multimodality_samples",
                       "candidates", "seed", "jobs"});

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kInvalid;
  }

  try {
    if (config_path.empty())
      if (const char* env = std::getenv("MOTION_DIFFUSE_CONFIG"); env != nullptr && *env != '\0') config_path = env;
    if (!config_path.empty()) settings.set_file(load_config_file(config_path), "config " + config_path);
    std::cerr << "settings:\n";
    settings.resolve(std::cerr);

    if (*mk) return run_make_synthetic(settings, out);
    if (*tr) return run_train(settings, data_dir, out, resume, log_path, embeddings);
    if (*sm) return run_sample(settings, ckpt, text, out, sidecar, embeddings);
    if (*ed)
      return run_edit(settings, ckpt, ref, mask, text, out, predict_after, keep_head, keep_tail, joints, sidecar, embeddings);
    if (*tx) return run_train_extractor(settings, data_dir, out);
    if (*ev) return run_eval(settings, ckpt, extractor, data_dir, out, embeddings);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kIo;
  } catch (const VersionError& e) {
    std::cerr << "incompatible file: " << e.what() << "\n";
    return kIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  }
  return kInvalid;
}
