#include "spkmoco/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "spkmoco/errors.hpp"

namespace spkmoco {

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'P', 'K', 'M'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_str(std::string& out, std::string_view s) {
  put<std::uint64_t>(out, s.size());
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_str() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  void read_doubles(double* dst, std::size_t n) {
    need(n * sizeof(double));
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) throw FormatError("archive truncated");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor& TensorArchive::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw FormatError("archive has no tensor '" + name + "'");
  return it->second;
}

const std::string& TensorArchive::meta_value(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw FormatError("archive has no metadata key '" + key + "'");
  return it->second;
}

std::string serialize_archive(const TensorArchive& archive) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kArchiveVersion);
  put_str(out, archive.kind);
  put<std::uint64_t>(out, archive.meta.size());
  for (const auto& [k, v] : archive.meta) {
    put_str(out, k);
    put_str(out, v);
  }
  put<std::uint64_t>(out, archive.tensors.size());
  for (const auto& [name, t] : archive.tensors) {
    put_str(out, name);
    put<std::uint64_t>(out, t.rank());
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  }
  return out;
}

TensorArchive deserialize_archive(std::string_view bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("not an archive (bad magic)");
  Reader r(bytes.substr(4));
  const auto version = r.get<std::uint32_t>();
  if (version != kArchiveVersion)
    throw FormatError("unsupported archive version " + std::to_string(version));
  TensorArchive a;
  a.kind = r.get_str();
  const auto n_meta = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    auto k = r.get_str();
    a.meta[k] = r.get_str();
  }
  const auto n_tensors = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    auto name = r.get_str();
    const auto rank = r.get<std::uint64_t>();
    if (rank == 0 || rank > 8) throw FormatError("bad tensor rank for '" + name + "'");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.get<std::uint64_t>();
      if (d == 0 || d > (std::uint64_t{1} << 40)) throw FormatError("bad dimension in '" + name + "'");
      n *= d;
    }
    std::vector<double> data(n);
    r.read_doubles(data.data(), n);
    a.tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw FormatError("trailing bytes after archive");
  return a;
}

void save_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = serialize_archive(archive);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw FormatError("write failed for '" + path.string() + "'");
}

TensorArchive load_archive(const std::filesystem::path& path, std::string_view expected_kind) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  TensorArchive a = deserialize_archive(ss.str());
  if (!expected_kind.empty() && a.kind != expected_kind)
    throw FormatError("'" + path.string() + "' is a " + a.kind + " archive, expected " +
                      std::string(expected_kind));
  return a;
}

}  // namespace spkmoco
