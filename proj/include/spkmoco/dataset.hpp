#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "spkmoco/archive.hpp"
#include "spkmoco/features.hpp"
#include "spkmoco/scoring.hpp"

namespace spkmoco {

inline const std::string kUnknownSpeaker = "unknown";

// Manifest lines "utt-id speaker-id wav-path"; speaker "unknown" marks
// unlabelled audio. Relative paths resolve against `base_dir`.
struct ManifestEntry {
  std::string utterance;
  std::string speaker;
  std::filesystem::path path;
};

std::vector<ManifestEntry> parse_manifest(std::istream& in, const std::filesystem::path& base_dir = {});
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

struct Utterance {
  std::string id;
  std::string speaker;
  FeatureMatrix features;  // all frames, VAD mask kept
};

// Feature archive: kind "features", tensors "frames/<id>" (T×d) and
// "vad/<id>" (T, 0/1), meta "speaker/<id>", "excluded/<id>" = reason and
// "mfcc", "vad", "cmn_window" describing the front end.
struct FeatureCorpus {
  std::vector<Utterance> utterances;  // sorted by id
  std::map<std::string, std::string> excluded;
  std::map<std::string, std::string> front_end;  // mfcc / vad / cmn_window
};

TensorArchive corpus_to_archive(const FeatureCorpus& corpus);
FeatureCorpus corpus_from_archive(const TensorArchive& archive);
void save_corpus(const std::filesystem::path& path, const FeatureCorpus& corpus);
FeatureCorpus load_corpus(const std::filesystem::path& path);

struct ExtractionReport {
  std::size_t kept = 0;
  std::map<std::string, std::string> excluded;  // id -> reason
};

// Reads every manifest entry, runs the front end and keeps utterances with
// at least `min_voiced_frames` voiced frames. Unreadable audio is recorded
// as "read-error: ..." and silence as "vad-empty".
FeatureCorpus extract_corpus(const std::vector<ManifestEntry>& manifest, const FeatureOptions& options,
                             std::size_t min_voiced_frames = 15, ExtractionReport* report = nullptr);

// Embedding archive: kind "embeddings", tensors "emb/<id>", meta
// "speaker/<id>" and "source".
struct EmbeddingSet {
  EmbeddingTable vectors;
  std::map<std::string, std::string> speakers;
  std::string source;
};

TensorArchive embeddings_to_archive(const EmbeddingSet& set);
EmbeddingSet embeddings_from_archive(const TensorArchive& archive);
void save_embeddings(const std::filesystem::path& path, const EmbeddingSet& set);
EmbeddingSet load_embeddings(const std::filesystem::path& path);

// Rows in id order with integer labels per distinct labelled speaker;
// utterances of speaker "unknown" are left out.
struct LabelledMatrix {
  Matrix data;
  std::vector<int> labels;
  std::vector<std::string> ids;
  std::vector<std::string> speakers;  // label -> speaker id
};
LabelledMatrix labelled_matrix(const EmbeddingSet& set);

// Every unordered pair of distinct labelled utterances, in id order.
std::vector<Trial> all_pairs_trials(const std::map<std::string, std::string>& speakers);

}  // namespace spkmoco
