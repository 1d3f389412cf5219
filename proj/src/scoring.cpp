#include "spkmoco/scoring.hpp"

#include <fstream>
#include <sstream>

#include "spkmoco/errors.hpp"

namespace spkmoco {

namespace {

constexpr const char* kBackendKind = "backend";

Tensor vector_to_tensor(const Vector& v) {
  return Tensor({static_cast<std::size_t>(v.size())}, std::vector<double>(v.data(), v.data() + v.size()));
}

Vector tensor_to_vector(const Tensor& t) {
  return Eigen::Map<const Vector>(t.data(), static_cast<Eigen::Index>(t.size()));
}

}  // namespace

Matrix tensor_to_matrix(const Tensor& t) {
  if (t.rank() != 2) throw FormatError("expected a matrix tensor, got " + shape_string(t.shape()));
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  return Eigen::Map<const RowMajor>(t.data(), static_cast<Eigen::Index>(t.rows()),
                                    static_cast<Eigen::Index>(t.cols()));
}

Tensor matrix_to_tensor(const Matrix& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      t.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = m(r, c);
  return t;
}

EnrollmentMap parse_enrollment(std::istream& in) {
  EnrollmentMap map;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    std::istringstream ss(line);
    std::string model;
    if (!(ss >> model) || model[0] == '#') continue;
    std::vector<std::string> utts;
    for (std::string u; ss >> u;) utts.push_back(u);
    if (utts.empty())
      throw FormatError("enrollment line " + std::to_string(lineno) + ": model without utterances");
    if (!map.emplace(model, std::move(utts)).second)
      throw FormatError("enrollment line " + std::to_string(lineno) + ": duplicate model " + model);
  }
  return map;
}

EnrollmentMap read_enrollment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_enrollment(in);
}

BackendKind parse_backend_kind(const std::string& name) {
  if (name == "cosine") return BackendKind::cosine;
  if (name == "plda") return BackendKind::plda;
  throw ParameterError("unknown backend '" + name + "' (cosine|plda)");
}

std::string backend_kind_name(BackendKind kind) {
  return kind == BackendKind::cosine ? "cosine" : "plda";
}

std::size_t BackendModel::input_dim() const {
  if (lda) return lda->in_dim();
  return static_cast<std::size_t>(mean.size());
}

Vector BackendModel::transform(const Vector& embedding) const {
  const std::size_t dim = input_dim();
  if (dim != 0 && static_cast<std::size_t>(embedding.size()) != dim)
    throw DimensionError("backend expects " + std::to_string(dim) + "-dim embeddings, got " +
                         std::to_string(embedding.size()));
  Vector v = lda ? lda->apply(embedding) : (mean.size() ? Vector(embedding - mean) : embedding);
  return kind == BackendKind::plda ? length_normalize(v) : v;
}

BackendModel train_backend(const Matrix& embeddings, std::span<const int> labels,
                           const BackendOptions& options, std::vector<std::string>* warnings) {
  BackendModel m;
  m.kind = options.kind;
  if (options.lda_dim > 0) m.lda = train_lda(embeddings, labels, options.lda_dim, warnings);
  if (m.kind == BackendKind::cosine) return m;
  if (!m.lda) m.mean = embeddings.colwise().mean().transpose();
  Matrix x(embeddings.rows(), m.lda ? static_cast<Eigen::Index>(options.lda_dim) : embeddings.cols());
  for (Eigen::Index r = 0; r < embeddings.rows(); ++r)
    x.row(r) = m.transform(embeddings.row(r).transpose()).transpose();
  m.plda = train_plda(x, labels, options.plda_iter, warnings).model;
  return m;
}

TensorArchive backend_to_archive(const BackendModel& model) {
  TensorArchive a;
  a.kind = kBackendKind;
  a.meta["backend.kind"] = backend_kind_name(model.kind);
  a.meta["backend.lda"] = model.lda ? "1" : "0";
  if (model.lda) {
    a.tensors["lda.projection"] = matrix_to_tensor(model.lda->projection);
    a.tensors["lda.mean"] = vector_to_tensor(model.lda->mean);
    a.tensors["lda.eigenvalues"] = vector_to_tensor(model.lda->eigenvalues);
    a.meta["lda.degenerate"] = model.lda->degenerate ? "1" : "0";
  }
  if (model.mean.size()) a.tensors["center.mean"] = vector_to_tensor(model.mean);
  if (model.plda) {
    a.tensors["plda.mu"] = vector_to_tensor(model.plda->mu);
    a.tensors["plda.phi_b"] = matrix_to_tensor(model.plda->phi_b);
    a.tensors["plda.phi_w"] = matrix_to_tensor(model.plda->phi_w);
  }
  return a;
}

BackendModel backend_from_archive(const TensorArchive& a) {
  if (a.kind != kBackendKind) throw FormatError("not a backend model archive: " + a.kind);
  BackendModel m;
  m.kind = parse_backend_kind(a.meta_value("backend.kind"));
  if (a.meta_value("backend.lda") == "1") {
    LdaTransform t;
    t.projection = tensor_to_matrix(a.tensor("lda.projection"));
    t.mean = tensor_to_vector(a.tensor("lda.mean"));
    t.eigenvalues = tensor_to_vector(a.tensor("lda.eigenvalues"));
    t.degenerate = a.meta_value("lda.degenerate") == "1";
    if (static_cast<std::size_t>(t.mean.size()) != t.in_dim())
      throw FormatError("LDA mean does not match projection");
    m.lda = std::move(t);
  }
  if (a.tensors.count("center.mean")) m.mean = tensor_to_vector(a.tensor("center.mean"));
  if (m.kind == BackendKind::plda) {
    PldaModel p;
    p.mu = tensor_to_vector(a.tensor("plda.mu"));
    p.phi_b = tensor_to_matrix(a.tensor("plda.phi_b"));
    p.phi_w = tensor_to_matrix(a.tensor("plda.phi_w"));
    p.validate();
    const std::size_t expect = m.lda ? m.lda->out_dim() : static_cast<std::size_t>(m.mean.size());
    if (p.dim() != expect) throw FormatError("PLDA dimension does not match its input transform");
    m.plda = std::move(p);
  }
  return m;
}

void save_backend(const std::filesystem::path& path, const BackendModel& model) {
  save_archive(path, backend_to_archive(model));
}

BackendModel load_backend(const std::filesystem::path& path) {
  return backend_from_archive(load_archive(path, kBackendKind));
}

ScoringResult score_trials(const std::vector<Trial>& trials, const EmbeddingTable& embeddings,
                           const EnrollmentMap& enrollment, const BackendModel& model,
                           const ScoringOptions& options) {
  std::optional<PldaScorer> plda;
  if (model.kind == BackendKind::plda) {
    if (!model.plda) throw FormatError("PLDA backend without a trained model");
    plda.emplace(*model.plda);
  }
  const EnrollNorm norm = model.kind == BackendKind::plda ? EnrollNorm::length : EnrollNorm::l2;

  std::map<std::string, Vector> enrolled;
  std::map<std::string, Vector> tests;
  auto missing_ids = [&](const Trial& t) {
    std::vector<std::string> miss;
    auto it = enrollment.find(t.enroll);
    if (it == enrollment.end()) {
      if (!embeddings.count(t.enroll)) miss.push_back(t.enroll);
    } else {
      for (const auto& u : it->second)
        if (!embeddings.count(u)) miss.push_back(u);
    }
    if (!embeddings.count(t.test)) miss.push_back(t.test);
    return miss;
  };

  ScoringResult result;
  for (const auto& t : trials) {
    const auto miss = missing_ids(t);
    if (!miss.empty()) {
      std::string line = t.enroll + " " + t.test + ": missing";
      for (const auto& m : miss) line += " " + m;
      result.missing.push_back(std::move(line));
      continue;
    }
    auto e = enrolled.find(t.enroll);
    if (e == enrolled.end()) {
      std::vector<Vector> vs;
      auto it = enrollment.find(t.enroll);
      if (it == enrollment.end()) {
        vs.push_back(model.transform(embeddings.at(t.enroll)));
      } else {
        for (const auto& u : it->second) vs.push_back(model.transform(embeddings.at(u)));
      }
      e = enrolled.emplace(t.enroll, enroll_average(vs, norm)).first;
    }
    auto v = tests.find(t.test);
    if (v == tests.end()) v = tests.emplace(t.test, model.transform(embeddings.at(t.test))).first;
    const double s = plda ? plda->llr(e->second, v->second) : cosine_score(e->second, v->second);
    result.scored.push_back({t.enroll, t.test, s});
    (t.target ? result.labelled.target : result.labelled.nontarget).push_back(s);
  }
  if (!result.missing.empty() && !options.allow_missing) {
    std::string msg = std::to_string(result.missing.size()) + " trial(s) reference missing ids";
    for (std::size_t i = 0; i < std::min<std::size_t>(result.missing.size(), 5); ++i)
      msg += "\n  " + result.missing[i];
    throw DataError(msg);
  }
  return result;
}

}  // namespace spkmoco
