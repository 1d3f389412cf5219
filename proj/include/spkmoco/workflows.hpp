#pragma once

#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "spkmoco/config.hpp"
#include "spkmoco/dataset.hpp"
#include "spkmoco/head.hpp"
#include "spkmoco/moco.hpp"

namespace spkmoco {

// Archive kind "checkpoint". Tensors:
//   supervised: encoder.*, head.*
//   moco:       encoder_q.*, encoder_k.*, moco.queue
//   both:       optim.velocity.<param>
// Meta holds the workflow, architecture, head/moco settings, train.step,
// moco.queue_ptr and the speaker list of the head.
struct Checkpoint {
  Workflow workflow = Workflow::aam;
  EncoderState encoder;  // supervised encoder or encoder_q
  std::optional<EncoderState> encoder_k;
  std::optional<HeadConfig> head_config;
  ParameterSet head;
  MoCoConfig moco;
  KeyQueue queue;
  std::map<std::string, Tensor> velocity;
  std::size_t step = 0;
  std::vector<std::string> speakers;
};

TensorArchive checkpoint_to_archive(const Checkpoint& ckpt);
Checkpoint checkpoint_from_archive(const TensorArchive& archive);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct InitReport {
  std::filesystem::path source;
  std::vector<std::string> loaded;   // encoder parameter names taken over
  std::vector<std::string> dropped;  // checkpoint entries not used
};

// Copies the embedding encoder of `source` (encoder.* or encoder_q.*) into
// `target`. Any name or shape difference is a DataError listing every
// mismatch.
InitReport load_encoder_into(EncoderState& target, const TensorArchive& source);

struct TrainLogRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;  // steps completed
  double dev_eer = std::numeric_limits<double>::quiet_NaN();
  std::filesystem::path checkpoint;
};

struct DataSplit {
  std::vector<const Utterance*> train;
  std::vector<const Utterance*> dev;
  std::vector<std::string> warnings;
};

// Per labelled speaker, `dev_per_speaker` utterances chosen by a seeded
// shuffle go to dev when the speaker keeps at least one for training.
DataSplit split_corpus(const FeatureCorpus& corpus, std::size_t dev_per_speaker, std::uint64_t seed);

struct TrainResult {
  std::vector<TrainLogRecord> log;
  std::vector<EpochRecord> epochs;
  std::optional<InitReport> init;
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;  // empty without a dev set
  double best_dev_eer = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> warnings;
};

// Writes config.json, epoch-NNN.ckpt per epoch, best.ckpt, final.ckpt,
// train_log.tsv and epochs.tsv into config.out_dir. Step t of T uses
// lr_start * (lr_end / lr_start)^(t / T). Throws DivergenceError on a
// non-finite loss or gradient.
TrainResult run_training(const RunConfig& config, const FeatureCorpus& corpus);
TrainResult run_training(const RunConfig& config);

// Eval-mode embeddings of the voiced frames of every utterance; utterances
// under the network context are skipped with a reason.
struct EmbeddingReport {
  std::size_t extracted = 0;
  std::map<std::string, std::string> skipped;
};

EmbeddingSet extract_embeddings(const EncoderState& encoder, std::span<const Utterance* const> utterances,
                                std::size_t workers = 1, EmbeddingReport* report = nullptr);
EmbeddingSet extract_embeddings(const EncoderState& encoder, const FeatureCorpus& corpus,
                                std::size_t workers = 1, EmbeddingReport* report = nullptr);

// All-pairs cosine EER over the given labelled utterances.
double cosine_eer(const EncoderState& encoder, std::span<const Utterance* const> utterances);

}  // namespace spkmoco
