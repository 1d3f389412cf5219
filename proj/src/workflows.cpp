#include "spkmoco/workflows.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "spkmoco/errors.hpp"
#include "spkmoco/metrics.hpp"
#include "spkmoco/objectives.hpp"

namespace spkmoco {

namespace {

constexpr const char* kCheckpointKind = "checkpoint";

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double parse_double(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("checkpoint meta " + key + " is not a number: " + s);
  }
}

std::size_t parse_size(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw FormatError("checkpoint meta " + key + " is not an integer: " + s);
  }
}

void put_encoder_config(TensorArchive& a, const EncoderConfig& c) {
  a.meta["encoder.input_dim"] = std::to_string(c.input_dim);
  std::string dims;
  for (std::size_t i = 0; i < kNumFrameLayers; ++i) dims += (i ? "," : "") + std::to_string(c.frame_dims[i]);
  a.meta["encoder.frame_dims"] = dims;
  a.meta["encoder.embed_a_dim"] = std::to_string(c.embed_a_dim);
  a.meta["encoder.embed_b_dim"] = std::to_string(c.embed_b_dim);
  a.meta["encoder.variance_floor"] = fmt(c.variance_floor);
  a.meta["encoder.bn_eps"] = fmt(c.bn_eps);
  a.meta["encoder.bn_momentum"] = fmt(c.bn_momentum);
}

EncoderConfig get_encoder_config(const TensorArchive& a) {
  EncoderConfig c;
  auto size = [&](const std::string& k) { return parse_size(a.meta_value(k), k); };
  auto real = [&](const std::string& k) { return parse_double(a.meta_value(k), k); };
  c.input_dim = size("encoder.input_dim");
  std::istringstream dims(a.meta_value("encoder.frame_dims"));
  std::string tok;
  for (std::size_t i = 0; i < kNumFrameLayers; ++i) {
    if (!std::getline(dims, tok, ',')) throw FormatError("checkpoint encoder.frame_dims is short");
    c.frame_dims[i] = parse_size(tok, "encoder.frame_dims");
  }
  c.embed_a_dim = size("encoder.embed_a_dim");
  c.embed_b_dim = size("encoder.embed_b_dim");
  c.variance_floor = real("encoder.variance_floor");
  c.bn_eps = real("encoder.bn_eps");
  c.bn_momentum = real("encoder.bn_momentum");
  c.validate();
  return c;
}

void put_params(TensorArchive& a, const ParameterSet& params, const std::string& prefix) {
  for (const auto& [name, p] : params) a.tensors[prefix + name] = p.value;
}

// Overwrites every parameter of `target` from archive tensors under prefix.
void get_params(ParameterSet& target, const TensorArchive& a, const std::string& prefix) {
  for (auto& [name, p] : target) {
    const Tensor& t = a.tensor(prefix + name);
    if (t.shape() != p.value.shape())
      throw FormatError("checkpoint tensor " + prefix + name + " has shape " + shape_string(t.shape()) +
                        ", expected " + shape_string(p.value.shape()));
    p.value = t;
  }
}

EncoderState encoder_skeleton(const EncoderConfig& c) {
  Rng rng(0);
  return init_encoder(c, rng);
}

std::string join_lines(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += s + "\n";
  return out;
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TensorArchive checkpoint_to_archive(const Checkpoint& c) {
  TensorArchive a;
  a.kind = kCheckpointKind;
  a.meta["workflow"] = workflow_name(c.workflow);
  a.meta["train.step"] = std::to_string(c.step);
  put_encoder_config(a, c.encoder.config);
  if (c.workflow == Workflow::moco) {
    if (!c.encoder_k) throw ContractError("MoCo checkpoint without a key encoder");
    put_params(a, c.encoder.params, "encoder_q.");
    put_params(a, c.encoder_k->params, "encoder_k.");
    a.meta["moco.queue_size"] = std::to_string(c.moco.queue_size);
    a.meta["moco.beta"] = fmt(c.moco.beta);
    a.meta["moco.tau"] = fmt(c.moco.tau);
    a.meta["moco.shuffle_groups"] = std::to_string(c.moco.n_shuffle_groups);
    a.meta["moco.queue_ptr"] = std::to_string(c.queue.ptr());
    a.tensors["moco.queue"] = c.queue.keys();
  } else {
    if (!c.head_config) throw ContractError("supervised checkpoint without a head");
    put_params(a, c.encoder.params, "encoder.");
    put_params(a, c.head, "head.");
    a.meta["head.kind"] = head_kind_name(c.head_config->kind);
    a.meta["head.num_classes"] = std::to_string(c.head_config->num_classes);
    a.meta["head.aam_scale"] = fmt(c.head_config->aam.scale);
    a.meta["head.aam_margin"] = fmt(c.head_config->aam.margin);
    a.meta["head.speakers"] = join_lines(c.speakers);
  }
  for (const auto& [name, v] : c.velocity) a.tensors["optim.velocity." + name] = v;
  return a;
}

Checkpoint checkpoint_from_archive(const TensorArchive& a) {
  if (a.kind != kCheckpointKind) throw FormatError("not a checkpoint archive: " + a.kind);
  Checkpoint c;
  c.workflow = parse_workflow(a.meta_value("workflow"));
  c.step = parse_size(a.meta_value("train.step"), "train.step");
  c.encoder = encoder_skeleton(get_encoder_config(a));
  if (c.workflow == Workflow::moco) {
    get_params(c.encoder.params, a, "encoder_q.");
    c.encoder_k = encoder_skeleton(c.encoder.config);
    get_params(c.encoder_k->params, a, "encoder_k.");
    c.moco.queue_size = parse_size(a.meta_value("moco.queue_size"), "moco.queue_size");
    c.moco.beta = parse_double(a.meta_value("moco.beta"), "moco.beta");
    c.moco.tau = parse_double(a.meta_value("moco.tau"), "moco.tau");
    c.moco.n_shuffle_groups = parse_size(a.meta_value("moco.shuffle_groups"), "moco.shuffle_groups");
    c.moco.validate();
    c.queue = KeyQueue(c.moco.queue_size, c.encoder.config.embed_b_dim);
    c.queue.restore(a.tensor("moco.queue"), parse_size(a.meta_value("moco.queue_ptr"), "moco.queue_ptr"));
  } else {
    get_params(c.encoder.params, a, "encoder.");
    HeadConfig h;
    h.kind = parse_head_kind(a.meta_value("head.kind"));
    h.num_classes = parse_size(a.meta_value("head.num_classes"), "head.num_classes");
    h.embed_dim = c.encoder.config.embed_b_dim;
    h.aam.scale = parse_double(a.meta_value("head.aam_scale"), "head.aam_scale");
    h.aam.margin = parse_double(a.meta_value("head.aam_margin"), "head.aam_margin");
    Rng rng(0);
    c.head = init_head(h, rng);
    get_params(c.head, a, "head.");
    c.head_config = h;
    c.speakers = split_lines(a.meta_value("head.speakers"));
  }
  const std::string vprefix = "optim.velocity.";
  for (const auto& [name, t] : a.tensors)
    if (name.rfind(vprefix, 0) == 0) c.velocity[name.substr(vprefix.size())] = t;
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  save_archive(path, checkpoint_to_archive(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_archive(load_archive(path, kCheckpointKind));
}

InitReport load_encoder_into(EncoderState& target, const TensorArchive& source) {
  if (source.kind != kCheckpointKind) throw FormatError("init source is not a checkpoint: " + source.kind);
  std::string prefix = "encoder.";
  for (const auto& [name, t] : source.tensors)
    if (name.rfind("encoder_q.", 0) == 0) {
      prefix = "encoder_q.";
      break;
    }
  InitReport r;
  std::vector<std::string> diff;
  for (const auto& [name, p] : target.params) {
    auto it = source.tensors.find(prefix + name);
    if (it == source.tensors.end()) {
      diff.push_back("missing " + prefix + name + " " + shape_string(p.value.shape()));
    } else if (it->second.shape() != p.value.shape()) {
      diff.push_back("shape " + prefix + name + ": checkpoint " + shape_string(it->second.shape()) +
                     " vs model " + shape_string(p.value.shape()));
    }
  }
  for (const auto& [name, t] : source.tensors) {
    if (name.rfind(prefix, 0) == 0 && !target.params.contains(name.substr(prefix.size())))
      diff.push_back("unexpected " + name + " " + shape_string(t.shape()));
  }
  if (!diff.empty()) {
    std::string msg = "init checkpoint does not match the encoder:";
    for (const auto& d : diff) msg += "\n  " + d;
    throw DataError(msg);
  }
  for (auto& [name, p] : target.params) {
    p.value = source.tensors.at(prefix + name);
    r.loaded.push_back(name);
  }
  for (const auto& [name, t] : source.tensors)
    if (name.rfind(prefix, 0) != 0) r.dropped.push_back(name);
  return r;
}

DataSplit split_corpus(const FeatureCorpus& corpus, std::size_t dev_per_speaker, std::uint64_t seed) {
  DataSplit s;
  std::map<std::string, std::vector<const Utterance*>> by_speaker;
  for (const auto& u : corpus.utterances) by_speaker[u.speaker].push_back(&u);
  std::map<std::string, bool> is_dev;
  for (auto& [spk, utts] : by_speaker) {
    if (spk == kUnknownSpeaker || dev_per_speaker == 0) continue;
    if (utts.size() <= dev_per_speaker) {
      s.warnings.push_back("speaker " + spk + " has only " + std::to_string(utts.size()) +
                           " utterances; none held out");
      continue;
    }
    std::vector<const Utterance*> order = utts;
    Rng rng(derive_seed(seed, "dev/" + spk));
    rng.shuffle(order.begin(), order.end());
    for (std::size_t i = 0; i < dev_per_speaker; ++i) is_dev[order[i]->id] = true;
  }
  for (const auto& u : corpus.utterances) (is_dev.count(u.id) ? s.dev : s.train).push_back(&u);
  return s;
}

EmbeddingSet extract_embeddings(const EncoderState& encoder, std::span<const Utterance* const> utterances,
                                std::size_t workers, EmbeddingReport* report) {
  const std::size_t n = utterances.size();
  std::vector<std::optional<Vector>> out(n);
  std::vector<std::string> reasons(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      const FeatureMatrix voiced = voiced_frames(utterances[i]->features);
      if (voiced.num_frames() < kMinNetworkContext) {
        reasons[i] = "too-short: " + std::to_string(voiced.num_frames()) + " voiced frames";
        continue;
      }
      const Embedding e = extract_embedding(encoder, voiced, utterances[i]->id);
      out[i] = Eigen::Map<const Vector>(e.vector.data(), static_cast<Eigen::Index>(e.vector.size()));
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  EmbeddingSet set;
  EmbeddingReport r;
  for (std::size_t i = 0; i < n; ++i) {
    if (out[i]) {
      set.vectors[utterances[i]->id] = std::move(*out[i]);
      set.speakers[utterances[i]->id] = utterances[i]->speaker;
      ++r.extracted;
    } else {
      r.skipped[utterances[i]->id] = reasons[i];
    }
  }
  if (report) *report = std::move(r);
  return set;
}

EmbeddingSet extract_embeddings(const EncoderState& encoder, const FeatureCorpus& corpus, std::size_t workers,
                                EmbeddingReport* report) {
  std::vector<const Utterance*> ptrs;
  for (const auto& u : corpus.utterances) ptrs.push_back(&u);
  return extract_embeddings(encoder, ptrs, workers, report);
}

double cosine_eer(const EncoderState& encoder, std::span<const Utterance* const> utterances) {
  const EmbeddingSet set = extract_embeddings(encoder, utterances);
  const auto trials = all_pairs_trials(set.speakers);
  return compute_eer(score_trials(trials, set.vectors, {}, BackendModel{}).labelled).eer;
}

namespace {

struct Trainer {
  const RunConfig& cfg;
  DataSplit split;
  std::vector<const Utterance*> train;
  std::vector<FeatureMatrix> voiced;  // parallel to train
  std::vector<int> labels;            // parallel to train (supervised)
  std::vector<std::string> speakers;

  Checkpoint state;
  MoCoState moco;
  OptimizerState opt;
  Rng data_rng;
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  TrainResult result;

  Trainer(const RunConfig& c, const FeatureCorpus& corpus)
      : cfg(c), split(split_corpus(corpus, c.dev_per_speaker, c.seed)), data_rng(derive_seed(c.seed, "data")) {
    result.warnings = split.warnings;
    const bool supervised = cfg.workflow != Workflow::moco;
    const std::size_t min_frames = cfg.min_train_frames ? cfg.min_train_frames : cfg.augment.crop_min;
    std::map<std::string, int> label_of;
    for (const auto* u : split.train)
      if (u->speaker != kUnknownSpeaker) label_of.emplace(u->speaker, 0);
    for (auto& [spk, idx] : label_of) {
      idx = static_cast<int>(speakers.size());
      speakers.push_back(spk);
    }
    std::size_t short_count = 0, unlabelled = 0;
    for (const auto* u : split.train) {
      if (u->features.dim != cfg.encoder.input_dim)
        throw DimensionError("utterance " + u->id + " has " + std::to_string(u->features.dim) +
                             "-dim features, encoder.input_dim is " + std::to_string(cfg.encoder.input_dim));
      if (supervised && u->speaker == kUnknownSpeaker) {
        ++unlabelled;
        continue;
      }
      FeatureMatrix v = voiced_frames(u->features);
      if (v.num_frames() < std::max(min_frames, cfg.augment.crop_min)) {
        ++short_count;
        continue;
      }
      train.push_back(u);
      voiced.push_back(std::move(v));
      labels.push_back(supervised ? label_of.at(u->speaker) : -1);
    }
    if (short_count)
      result.warnings.push_back(std::to_string(short_count) + " utterance(s) shorter than the crop minimum skipped");
    if (unlabelled) result.warnings.push_back(std::to_string(unlabelled) + " unlabelled utterance(s) skipped");
    if (train.empty()) throw DataError("no usable training utterances");
    if (supervised && speakers.size() < 2) throw DataError("supervised training needs at least 2 speakers");

    Rng init_rng(derive_seed(cfg.seed, "init"));
    state.workflow = cfg.workflow;
    state.encoder = init_encoder(cfg.encoder, init_rng);
    if (supervised) {
      HeadConfig h;
      h.kind = cfg.workflow == Workflow::ce ? HeadKind::ce : HeadKind::aam;
      h.num_classes = speakers.size();
      h.embed_dim = cfg.encoder.embed_b_dim;
      h.aam = cfg.aam;
      state.head_config = h;
      state.head = init_head(h, init_rng);
      state.speakers = speakers;
    }
    if (cfg.init_from) {
      InitReport r = load_encoder_into(state.encoder, load_archive(*cfg.init_from, kCheckpointKind));
      r.source = *cfg.init_from;
      result.init = std::move(r);
    }
    if (!supervised) {
      Rng queue_rng(derive_seed(cfg.seed, "queue"));
      moco = init_moco(state.encoder, cfg.moco, queue_rng);
    }
    opt.momentum = cfg.momentum;
    opt.weight_decay = cfg.weight_decay;
    opt.max_grad_norm = cfg.max_grad_norm;
    opt.lr = cfg.lr_start;
    order.resize(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    data_rng.shuffle(order.begin(), order.end());
  }

  std::vector<std::size_t> next_batch() {
    std::vector<std::size_t> b;
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      if (cursor == order.size()) {
        data_rng.shuffle(order.begin(), order.end());
        cursor = 0;
      }
      b.push_back(order[cursor++]);
    }
    return b;
  }

  std::pair<double, double> supervised_step(const std::vector<std::size_t>& batch) {
    std::size_t shortest = SIZE_MAX;
    for (auto i : batch) shortest = std::min(shortest, voiced[i].num_frames());
    const auto len = static_cast<std::size_t>(data_rng.uniform_int(
        static_cast<std::int64_t>(cfg.augment.crop_min),
        static_cast<std::int64_t>(std::min(cfg.augment.crop_max, shortest))));
    std::vector<FeatureMatrix> crops;
    std::vector<int> y;
    for (auto i : batch) {
      FeatureMatrix c = random_crop(voiced[i], len, data_rng);
      if (cfg.supervised_spec_augment) c = spec_augment(c, cfg.augment, data_rng);
      crops.push_back(std::move(c));
      y.push_back(labels[i]);
    }
    state.encoder.params.zero_grad();
    state.head.zero_grad();
    double loss = 0.0;
    {
      Graph g;
      ForwardOptions fo;
      fo.train = true;
      fo.dropout_p = cfg.dropout;
      fo.rng = &data_rng;
      const EncoderOutputs out = encode(g, state.encoder, stack_batch(crops), batch.size(), fo);
      const Var logits = classifier_logits(g, state.head, *state.head_config, out.embedding, y, true);
      const Var l = cross_entropy(logits, y);
      loss = l.value()[0];
      if (!std::isfinite(loss)) throw DivergenceError("non-finite training loss");
      g.backward(l);
    }
    ParamRefs refs;
    collect_params(refs, state.encoder.params, "encoder.");
    collect_params(refs, state.head, "head.");
    return {loss, sgd_step(refs, opt).grad_norm};
  }

  std::pair<double, double> moco_step_once(const std::vector<std::size_t>& batch) {
    std::vector<const FeatureMatrix*> ptrs;
    for (auto i : batch) ptrs.push_back(&voiced[i]);
    const MoCoStepResult r = moco_step(moco, ptrs, cfg.augment, opt, data_rng);
    if (!std::isfinite(r.loss)) throw DivergenceError("non-finite contrastive loss");
    return {r.loss, r.grad_norm};
  }

  Checkpoint snapshot(std::size_t step) {
    Checkpoint c = state;
    c.step = step;
    c.velocity = opt.velocity;
    if (cfg.workflow == Workflow::moco) {
      c.encoder = moco.encoder_q;
      c.encoder_k = moco.encoder_k;
      c.moco = moco.config;
      c.queue = moco.queue;
    }
    return c;
  }

  const EncoderState& embedder() const { return cfg.workflow == Workflow::moco ? moco.encoder_q : state.encoder; }

  void end_epoch(std::size_t epoch, std::size_t step) {
    EpochRecord e;
    e.epoch = epoch;
    e.step = step;
    std::ostringstream name;
    name << "epoch-" << std::setw(3) << std::setfill('0') << epoch << ".ckpt";
    e.checkpoint = cfg.out_dir / name.str();
    const Checkpoint c = snapshot(step);
    save_checkpoint(e.checkpoint, c);
    if (!split.dev.empty()) {
      e.dev_eer = cosine_eer(embedder(), split.dev);
      if (std::isnan(result.best_dev_eer) || e.dev_eer < result.best_dev_eer) {
        result.best_dev_eer = e.dev_eer;
        result.best_checkpoint = cfg.out_dir / "best.ckpt";
        save_checkpoint(result.best_checkpoint, c);
      }
    }
    result.epochs.push_back(e);
  }

  void run() {
    using clock = std::chrono::steady_clock;
    std::filesystem::create_directories(cfg.out_dir);
    {
      std::ofstream out(cfg.out_dir / "config.json");
      out << config_to_json(cfg);
    }
    std::size_t epoch = 0;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
      const auto t0 = clock::now();
      opt.lr = exponential_lr(cfg.lr_start, cfg.lr_end, step, cfg.steps);
      const auto batch = next_batch();
      const auto [loss, grad_norm] =
          cfg.workflow == Workflow::moco ? moco_step_once(batch) : supervised_step(batch);
      const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
      result.log.push_back({step, opt.lr, loss, grad_norm, ms});
      if ((step + 1) % cfg.steps_per_epoch == 0 || step + 1 == cfg.steps) end_epoch(++epoch, step + 1);
    }
    result.final_checkpoint = cfg.out_dir / "final.ckpt";
    save_checkpoint(result.final_checkpoint, snapshot(cfg.steps));
    write_logs();
  }

  void write_logs() const {
    std::ofstream log(cfg.out_dir / "train_log.tsv");
    log << "step\tlr\tloss\tgrad_norm\twall_ms\n" << std::setprecision(10);
    for (const auto& r : result.log)
      log << r.step << '\t' << r.lr << '\t' << r.loss << '\t' << r.grad_norm << '\t' << r.wall_ms << '\n';
    std::ofstream ep(cfg.out_dir / "epochs.tsv");
    ep << "epoch\tstep\tdev_eer\tcheckpoint\n" << std::setprecision(10);
    for (const auto& e : result.epochs)
      ep << e.epoch << '\t' << e.step << '\t' << e.dev_eer << '\t' << e.checkpoint.filename().string() << '\n';
  }
};

}  // namespace

TrainResult run_training(const RunConfig& config, const FeatureCorpus& corpus) {
  config.validate();
  Trainer t(config, corpus);
  t.run();
  return std::move(t.result);
}

TrainResult run_training(const RunConfig& config) {
  config.validate();
  config.validate_paths();
  return run_training(config, load_corpus(config.train_features));
}

}  // namespace spkmoco
