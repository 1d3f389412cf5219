#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spkmoco/archive.hpp"
#include "spkmoco/backend.hpp"
#include "spkmoco/metrics.hpp"

namespace spkmoco {

using EmbeddingTable = std::map<std::string, Vector>;
// model-id -> enrollment utterance ids. A model id absent from the map is
// treated as a single utterance id.
using EnrollmentMap = std::map<std::string, std::vector<std::string>>;

// Lines "model-id utt1 [utt2 ...]".
EnrollmentMap parse_enrollment(std::istream& in);
EnrollmentMap read_enrollment(const std::filesystem::path& path);

enum class BackendKind { cosine, plda };
BackendKind parse_backend_kind(const std::string& name);
std::string backend_kind_name(BackendKind kind);

struct BackendOptions {
  BackendKind kind = BackendKind::cosine;
  std::size_t lda_dim = 0;  // 0 disables LDA
  int plda_iter = 10;
};

struct BackendModel {
  BackendKind kind = BackendKind::cosine;
  std::optional<LdaTransform> lda;
  Vector mean;  // centering when there is no LDA (PLDA path only)
  std::optional<PldaModel> plda;

  // Expected embedding dimension, 0 when unconstrained (plain cosine).
  std::size_t input_dim() const;
  // LDA or centering, then length normalization on the PLDA path.
  Vector transform(const Vector& embedding) const;
};

BackendModel train_backend(const Matrix& embeddings, std::span<const int> labels,
                           const BackendOptions& options,
                           std::vector<std::string>* warnings = nullptr);

TensorArchive backend_to_archive(const BackendModel& model);
BackendModel backend_from_archive(const TensorArchive& archive);
void save_backend(const std::filesystem::path& path, const BackendModel& model);
BackendModel load_backend(const std::filesystem::path& path);

struct ScoringOptions {
  bool allow_missing = false;
};

struct ScoringResult {
  std::vector<ScoredTrial> scored;  // trial-list order, skipped trials omitted
  TrialScores labelled;
  std::vector<std::string> missing;  // one line per skipped trial
};

// Throws DataError listing the missing ids unless options.allow_missing.
ScoringResult score_trials(const std::vector<Trial>& trials, const EmbeddingTable& embeddings,
                           const EnrollmentMap& enrollment, const BackendModel& model,
                           const ScoringOptions& options = {});

Matrix tensor_to_matrix(const Tensor& t);
Tensor matrix_to_tensor(const Matrix& m);

}  // namespace spkmoco
