#include "spkmoco/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "spkmoco/errors.hpp"
#include "spkmoco/wav.hpp"

namespace spkmoco {

std::vector<ManifestEntry> parse_manifest(std::istream& in, const std::filesystem::path& base_dir) {
  std::vector<ManifestEntry> out;
  std::map<std::string, std::size_t> seen;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    std::istringstream ss(line);
    std::string utt, spk, path, extra;
    if (!(ss >> utt) || utt[0] == '#') continue;
    if (!(ss >> spk >> path) || (ss >> extra))
      throw FormatError("manifest line " + std::to_string(lineno) + ": expected 'utt-id speaker-id path'");
    if (!seen.emplace(utt, lineno).second)
      throw FormatError("manifest line " + std::to_string(lineno) + ": duplicate utterance " + utt);
    std::filesystem::path p(path);
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    out.push_back({utt, spk, p});
  }
  return out;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path());
}

TensorArchive corpus_to_archive(const FeatureCorpus& corpus) {
  TensorArchive a;
  a.kind = "features";
  for (const auto& [k, v] : corpus.front_end) a.meta[k] = v;
  for (const auto& [id, reason] : corpus.excluded) a.meta["excluded/" + id] = reason;
  for (const auto& u : corpus.utterances) {
    a.meta["speaker/" + u.id] = u.speaker;
    const std::size_t t = u.features.num_frames();
    a.tensors["frames/" + u.id] = Tensor({t, u.features.dim}, u.features.frames);
    std::vector<double> vad(u.features.vad_mask.begin(), u.features.vad_mask.end());
    if (vad.size() != t) vad.assign(t, 1.0);
    a.tensors["vad/" + u.id] = Tensor({t}, std::move(vad));
  }
  return a;
}

FeatureCorpus corpus_from_archive(const TensorArchive& a) {
  if (a.kind != "features") throw FormatError("not a feature archive: " + a.kind);
  FeatureCorpus c;
  for (const auto& [key, value] : a.meta) {
    if (key.rfind("excluded/", 0) == 0) {
      c.excluded[key.substr(9)] = value;
    } else if (key.rfind("speaker/", 0) != 0) {
      c.front_end[key] = value;
    }
  }
  for (const auto& [name, t] : a.tensors) {
    if (name.rfind("frames/", 0) != 0) continue;
    const std::string id = name.substr(7);
    Utterance u;
    u.id = id;
    u.speaker = a.meta_value("speaker/" + id);
    if (t.rank() != 2) throw FormatError("frames/" + id + " is not a matrix");
    u.features = FeatureMatrix(t.rows(), t.shape()[1]);
    u.features.frames = t.storage();
    const Tensor& vad = a.tensor("vad/" + id);
    if (vad.size() != t.rows()) throw FormatError("vad/" + id + " length differs from frames");
    u.features.vad_mask.assign(vad.size(), 0);
    for (std::size_t i = 0; i < vad.size(); ++i) u.features.vad_mask[i] = vad[i] != 0.0;
    c.utterances.push_back(std::move(u));
  }
  return c;
}

void save_corpus(const std::filesystem::path& path, const FeatureCorpus& corpus) {
  save_archive(path, corpus_to_archive(corpus));
}

FeatureCorpus load_corpus(const std::filesystem::path& path) {
  return corpus_from_archive(load_archive(path, "features"));
}

FeatureCorpus extract_corpus(const std::vector<ManifestEntry>& manifest, const FeatureOptions& options,
                             std::size_t min_voiced_frames, ExtractionReport* report) {
  FeatureCorpus c;
  c.front_end["mfcc"] = options.mfcc.describe();
  std::ostringstream vad;
  vad.precision(17);
  vad << "threshold=" << options.vad.threshold << " mean_scale=" << options.vad.mean_scale
      << " min_voiced_frames=" << min_voiced_frames;
  c.front_end["vad"] = vad.str();
  c.front_end["cmn_window"] = std::to_string(options.cmn_window);
  for (const auto& e : manifest) {
    FeatureMatrix f;
    try {
      f = extract_features(read_wav(e.path), options);
    } catch (const std::exception& ex) {
      c.excluded[e.utterance] = std::string("read-error: ") + ex.what();
      continue;
    }
    const auto voiced = static_cast<std::size_t>(std::count(f.vad_mask.begin(), f.vad_mask.end(), 1));
    if (voiced < min_voiced_frames) {
      c.excluded[e.utterance] = "vad-empty";
      continue;
    }
    c.utterances.push_back({e.utterance, e.speaker, std::move(f)});
  }
  std::sort(c.utterances.begin(), c.utterances.end(),
            [](const Utterance& a, const Utterance& b) { return a.id < b.id; });
  if (report) {
    report->kept = c.utterances.size();
    report->excluded = c.excluded;
  }
  return c;
}

TensorArchive embeddings_to_archive(const EmbeddingSet& set) {
  TensorArchive a;
  a.kind = "embeddings";
  a.meta["source"] = set.source;
  for (const auto& [id, v] : set.vectors) {
    a.tensors["emb/" + id] =
        Tensor({static_cast<std::size_t>(v.size())}, std::vector<double>(v.data(), v.data() + v.size()));
    auto it = set.speakers.find(id);
    a.meta["speaker/" + id] = it == set.speakers.end() ? kUnknownSpeaker : it->second;
  }
  return a;
}

EmbeddingSet embeddings_from_archive(const TensorArchive& a) {
  if (a.kind != "embeddings") throw FormatError("not an embedding archive: " + a.kind);
  EmbeddingSet s;
  if (a.meta.count("source")) s.source = a.meta_value("source");
  for (const auto& [name, t] : a.tensors) {
    if (name.rfind("emb/", 0) != 0) continue;
    const std::string id = name.substr(4);
    s.vectors[id] = Eigen::Map<const Vector>(t.data(), static_cast<Eigen::Index>(t.size()));
    auto it = a.meta.find("speaker/" + id);
    s.speakers[id] = it == a.meta.end() ? kUnknownSpeaker : it->second;
  }
  return s;
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingSet& set) {
  save_archive(path, embeddings_to_archive(set));
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) {
  return embeddings_from_archive(load_archive(path, "embeddings"));
}

LabelledMatrix labelled_matrix(const EmbeddingSet& set) {
  LabelledMatrix m;
  std::map<std::string, int> index;
  Eigen::Index dim = -1;
  for (const auto& [id, v] : set.vectors) {
    auto it = set.speakers.find(id);
    if (it == set.speakers.end() || it->second == kUnknownSpeaker) continue;
    if (dim < 0) dim = v.size();
    if (v.size() != dim) throw DimensionError("embedding " + id + " has a different dimension");
    auto [pos, inserted] = index.emplace(it->second, static_cast<int>(index.size()));
    if (inserted) m.speakers.push_back(it->second);
    m.ids.push_back(id);
    m.labels.push_back(pos->second);
  }
  m.data.resize(static_cast<Eigen::Index>(m.ids.size()), std::max<Eigen::Index>(dim, 0));
  for (std::size_t r = 0; r < m.ids.size(); ++r)
    m.data.row(static_cast<Eigen::Index>(r)) = set.vectors.at(m.ids[r]).transpose();
  return m;
}

std::vector<Trial> all_pairs_trials(const std::map<std::string, std::string>& speakers) {
  std::vector<std::pair<std::string, std::string>> labelled;
  for (const auto& [id, spk] : speakers)
    if (spk != kUnknownSpeaker) labelled.emplace_back(id, spk);
  std::vector<Trial> trials;
  for (std::size_t i = 0; i < labelled.size(); ++i)
    for (std::size_t j = i + 1; j < labelled.size(); ++j)
      trials.push_back({labelled[i].first, labelled[j].first, labelled[i].second == labelled[j].second});
  return trials;
}

}  // namespace spkmoco
