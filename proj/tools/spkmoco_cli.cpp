// spkmoco command-line front end. Exit codes: 0 ok, 1 usage, 2 data, 3 divergence.
#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <map>

#include "spkmoco/config.hpp"
#include "spkmoco/dataset.hpp"
#include "spkmoco/errors.hpp"
#include "spkmoco/metrics.hpp"
#include "spkmoco/scoring.hpp"
#include "spkmoco/synthetic.hpp"
#include "spkmoco/workflows.hpp"

using namespace spkmoco;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0, kUsage = 1, kData = 2, kDiverged = 3;

void print_warnings(const std::vector<std::string>& w) {
  for (const auto& s : w) std::cerr << "warning: " << s << '\n';
}

int cmd_extract_features(const fs::path& manifest, const fs::path& out, std::size_t min_frames,
                         const FeatureOptions& opts) {
  const auto entries = read_manifest(manifest);
  ExtractionReport report;
  const FeatureCorpus corpus = extract_corpus(entries, opts, min_frames, &report);
  save_corpus(out, corpus);
  for (const auto& [id, reason] : report.excluded) std::cerr << "excluded " << id << ": " << reason << '\n';
  std::cout << "kept " << report.kept << " of " << entries.size() << " utterances\n";
  if (report.kept == 0) {
    std::cerr << "error: no utterances extracted\n";
    return kData;
  }
  return kOk;
}

int cmd_make_synthetic(const SyntheticOptions& so, const fs::path& out, const std::string& trials_path) {
  FeatureCorpus corpus;
  corpus.front_end["synthetic"] = "speakers=" + std::to_string(so.n_speakers) +
                                  " utts=" + std::to_string(so.utts_per_speaker) +
                                  " dim=" + std::to_string(so.dim) + " seed=" + std::to_string(so.seed);
  std::map<std::string, std::string> speakers;
  for (auto& u : make_synthetic(so)) {
    speakers[u.id] = u.speaker;
    corpus.utterances.push_back({u.id, u.speaker, std::move(u.features)});
  }
  save_corpus(out, corpus);
  if (!trials_path.empty()) {
    std::ofstream t(trials_path);
    if (!t) throw DataError("cannot write " + trials_path);
    for (const auto& tr : all_pairs_trials(speakers))
      t << tr.enroll << ' ' << tr.test << ' ' << (tr.target ? "target" : "nontarget") << '\n';
  }
  std::cout << "wrote " << corpus.utterances.size() << " utterances\n";
  return kOk;
}

int cmd_train(const fs::path& config_path, const std::string& workflow, const std::vector<std::string>& sets,
              const std::string& features, const std::string& init_from, const std::string& out_dir) {
  RunConfig cfg = config_path.empty() ? RunConfig::defaults(workflow.empty() ? Workflow::aam : parse_workflow(workflow))
                                      : load_config(config_path);
  if (!workflow.empty()) cfg.workflow = parse_workflow(workflow);
  apply_overrides(cfg, sets);
  if (!features.empty()) cfg.train_features = features;
  if (!init_from.empty()) cfg.init_from = fs::path(init_from);
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  const TrainResult r = run_training(cfg);
  print_warnings(r.warnings);
  if (r.init) {
    std::cout << "init-from " << r.init->source.string() << ": loaded " << r.init->loaded.size()
              << " encoder tensors, dropped " << r.init->dropped.size() << '\n';
    std::map<std::string, std::size_t> groups;
    for (const auto& d : r.init->dropped) ++groups[d.substr(0, d.find('.'))];
    for (const auto& [prefix, n] : groups) std::cout << "  dropped " << prefix << ".* (" << n << ")\n";
  }
  for (const auto& e : r.epochs)
    std::cout << "epoch " << e.epoch << " step " << e.step << " dev_eer " << e.dev_eer << '\n';
  std::cout << "final " << r.final_checkpoint.string() << '\n';
  if (!r.best_checkpoint.empty()) std::cout << "best " << r.best_checkpoint.string() << '\n';
  return kOk;
}

int cmd_extract_embeddings(const fs::path& ckpt_path, const fs::path& features, const fs::path& out,
                           std::size_t workers) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const FeatureCorpus corpus = load_corpus(features);
  EmbeddingReport report;
  EmbeddingSet set = extract_embeddings(ckpt.encoder, corpus, workers, &report);
  set.source = ckpt_path.filename().string() + (ckpt.workflow == Workflow::moco ? " encoder_q" : " encoder");
  save_embeddings(out, set);
  for (const auto& [id, reason] : report.skipped) std::cerr << "skipped " << id << ": " << reason << '\n';
  std::cout << "extracted " << report.extracted << " of " << corpus.utterances.size() << " utterances\n";
  return report.extracted == 0 ? kData : kOk;
}

int cmd_train_backend(const fs::path& emb_path, const std::string& kind, std::size_t lda_dim, int plda_iter,
                      const fs::path& out) {
  BackendOptions opts;
  opts.kind = parse_backend_kind(kind);
  opts.lda_dim = lda_dim;
  opts.plda_iter = plda_iter;
  BackendModel model;
  std::vector<std::string> warnings;
  if (opts.kind == BackendKind::cosine && lda_dim == 0) {
    model.kind = BackendKind::cosine;
  } else {
    const LabelledMatrix m = labelled_matrix(load_embeddings(emb_path));
    model = train_backend(m.data, m.labels, opts, &warnings);
  }
  print_warnings(warnings);
  save_backend(out, model);
  std::cout << "backend " << backend_kind_name(model.kind) << (model.lda ? " with LDA" : "") << '\n';
  return kOk;
}

int cmd_score(const fs::path& backend, const fs::path& emb, const fs::path& trials, const std::string& enroll,
              const fs::path& out, bool allow_missing) {
  const BackendModel model = load_backend(backend);
  const EmbeddingSet set = load_embeddings(emb);
  const EnrollmentMap map = enroll.empty() ? EnrollmentMap{} : read_enrollment(enroll);
  ScoringOptions so;
  so.allow_missing = allow_missing;
  const ScoringResult r = score_trials(read_trials(trials), set.vectors, map, model, so);
  for (const auto& m : r.missing) std::cerr << "skipped " << m << '\n';
  write_scores(out, r.scored);
  std::cout << "scored " << r.scored.size() << " trials\n";
  return kOk;
}

void write_det_file(const fs::path& path, const TrialScores& labelled) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream det(path);
  if (!det) throw DataError("cannot write " + path.string());
  write_det_table(det, det_points(labelled));
}

int cmd_evaluate(const fs::path& scores, const fs::path& trials, const std::string& report_path,
                 const std::string& det_path, double c_miss, double c_fa) {
  const TrialScores labelled = label_scores(read_scores(scores), read_trials(trials));
  const MetricsReport r = evaluate_scores(labelled, c_miss, c_fa);
  write_report(std::cout, r);
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    if (!out) throw DataError("cannot write " + report_path);
    write_report(out, r);
  }
  if (!det_path.empty()) write_det_file(det_path, labelled);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spkmoco: MoCo x-vector speaker verification toolkit"};
  app.require_subcommand(1);

  // extract-features
  auto* ef = app.add_subcommand("extract-features", "MFCC + VAD + CMN for every manifest entry");
  fs::path ef_manifest, ef_out;
  std::size_t ef_min = kMinNetworkContext;
  FeatureOptions fopts;
  ef->add_option("--manifest", ef_manifest, "lines 'utt-id speaker-id wav-path'")->required();
  ef->add_option("--out", ef_out, "feature archive")->required();
  ef->add_option("--min-frames", ef_min, "minimum voiced frames")->capture_default_str();
  ef->add_option("--sample-rate", fopts.mfcc.sample_rate)->capture_default_str();
  ef->add_option("--num-ceps", fopts.mfcc.num_ceps)->capture_default_str();
  ef->add_option("--num-mel-bins", fopts.mfcc.num_mel_bins)->capture_default_str();
  ef->add_option("--vad-threshold", fopts.vad.threshold)->capture_default_str();
  ef->add_option("--vad-mean-scale", fopts.vad.mean_scale)->capture_default_str();
  ef->add_option("--cmn-window", fopts.cmn_window)->capture_default_str();

  // make-synthetic
  auto* ms = app.add_subcommand("make-synthetic", "write a synthetic labelled feature archive");
  SyntheticOptions so;
  fs::path ms_out;
  std::string ms_trials;
  ms->add_option("--out", ms_out, "feature archive")->required();
  ms->add_option("--trials", ms_trials, "also write all-pairs trials");
  ms->add_option("--speakers", so.n_speakers)->capture_default_str();
  ms->add_option("--utts", so.utts_per_speaker)->capture_default_str();
  ms->add_option("--dim", so.dim)->capture_default_str();
  ms->add_option("--min-frames", so.min_frames)->capture_default_str();
  ms->add_option("--max-frames", so.max_frames)->capture_default_str();
  ms->add_option("--noise", so.noise_scale)->capture_default_str();
  ms->add_option("--seed", so.seed)->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "train an encoder (ce, aam or moco)");
  fs::path tr_config;
  std::string tr_workflow, tr_features, tr_init, tr_out;
  std::vector<std::string> tr_sets;
  bool tr_print = false;
  tr->add_option("--config", tr_config, "JSON run config with dotted keys");
  tr->add_option("--workflow", tr_workflow, "ce|aam|moco")->check(CLI::IsMember({"ce", "aam", "moco"}));
  tr->add_option("--set", tr_sets, "key=value override (repeatable)");
  tr->add_option("--features", tr_features, "training feature archive");
  tr->add_option("--init-from", tr_init, "checkpoint whose encoder initializes this run");
  tr->add_option("--out-dir", tr_out, "output directory");
  tr->add_flag("--print-config", tr_print, "print the resolved config and exit");

  // extract-embeddings
  auto* ee = app.add_subcommand("extract-embeddings", "embed every utterance of a feature archive");
  fs::path ee_ckpt, ee_features, ee_out;
  std::size_t ee_workers = 1;
  ee->add_option("--checkpoint", ee_ckpt)->required();
  ee->add_option("--features", ee_features)->required();
  ee->add_option("--out", ee_out, "embedding archive")->required();
  ee->add_option("--workers", ee_workers)->capture_default_str()->check(CLI::PositiveNumber);

  // train-backend
  auto* tb = app.add_subcommand("train-backend", "fit a cosine or LDA/PLDA backend");
  fs::path tb_emb, tb_out;
  std::string tb_kind = "cosine";
  std::size_t tb_lda = 0;
  int tb_iter = 10;
  tb->add_option("--embeddings", tb_emb, "labelled embedding archive");
  tb->add_option("--kind", tb_kind)->check(CLI::IsMember({"cosine", "plda"}))->capture_default_str();
  tb->add_option("--lda-dim", tb_lda, "0 disables LDA")->capture_default_str();
  tb->add_option("--plda-iter", tb_iter)->capture_default_str();
  tb->add_option("--out", tb_out)->required();

  // score
  auto* sc = app.add_subcommand("score", "score a trial list");
  fs::path sc_backend, sc_emb, sc_trials, sc_out;
  std::string sc_enroll;
  bool sc_allow = false;
  sc->add_option("--backend", sc_backend)->required();
  sc->add_option("--embeddings", sc_emb)->required();
  sc->add_option("--trials", sc_trials)->required();
  sc->add_option("--enroll", sc_enroll, "lines 'model-id utt1 utt2 ...'");
  sc->add_option("--out", sc_out)->required();
  sc->add_flag("--allow-missing", sc_allow, "skip trials with missing ids");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "EER and minDCF of a score file");
  fs::path ev_scores, ev_trials;
  std::string ev_report, ev_det;
  double c_miss = 1.0, c_fa = 1.0;
  ev->add_option("--scores", ev_scores)->required();
  ev->add_option("--trials", ev_trials)->required();
  ev->add_option("--report", ev_report);
  ev->add_option("--det", ev_det, "also write the DET table");
  ev->add_option("--c-miss", c_miss)->capture_default_str();
  ev->add_option("--c-fa", c_fa)->capture_default_str();

  // det
  auto* dt = app.add_subcommand("det", "DET table of a score file");
  fs::path dt_scores, dt_trials, dt_out;
  dt->add_option("--scores", dt_scores)->required();
  dt->add_option("--trials", dt_trials)->required();
  dt->add_option("--out", dt_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*ef) return cmd_extract_features(ef_manifest, ef_out, ef_min, fopts);
    if (*ms) return cmd_make_synthetic(so, ms_out, ms_trials);
    if (*tr) {
      if (tr_print) {
        RunConfig cfg = tr_config.empty() ? RunConfig::defaults(tr_workflow.empty() ? Workflow::aam
                                                                                    : parse_workflow(tr_workflow))
                                          : load_config(tr_config);
        if (!tr_workflow.empty()) cfg.workflow = parse_workflow(tr_workflow);
        apply_overrides(cfg, tr_sets);
        std::cout << config_to_json(cfg);
        return kOk;
      }
      return cmd_train(tr_config, tr_workflow, tr_sets, tr_features, tr_init, tr_out);
    }
    if (*ee) return cmd_extract_embeddings(ee_ckpt, ee_features, ee_out, ee_workers);
    if (*tb) {
      if (tb_kind == "plda" && tb_emb.empty()) throw ParameterError("--embeddings is required for plda");
      return cmd_train_backend(tb_emb, tb_kind, tb_lda, tb_iter, tb_out);
    }
    if (*sc) return cmd_score(sc_backend, sc_emb, sc_trials, sc_enroll, sc_out, sc_allow);
    if (*ev) return cmd_evaluate(ev_scores, ev_trials, ev_report, ev_det, c_miss, c_fa);
    if (*dt) {
      write_det_file(dt_out, label_scores(read_scores(dt_scores), read_trials(dt_trials)));
      return kOk;
    }
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
