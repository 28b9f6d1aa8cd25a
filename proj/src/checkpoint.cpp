#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "atalp/dataio.hpp"

namespace atalp {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'A', 'T', 'A', 'L', 'P', 'C', 'K', '\0'};

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    buf_.append(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint64_t>(s.size()));
    buf_.append(s);
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string bytes, fs::path path) : buf_(std::move(bytes)), path_(std::move(path)) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == buf_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw IoError("malformed checkpoint " + path_.string() + ": " + what);
  }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) fail("truncated");
  }
  std::string buf_;
  std::size_t pos_ = 0;
  fs::path path_;
};

}  // namespace

template <typename Scalar>
void save_checkpoint(const Model<Scalar>& model, const fs::path& path) {
  Writer w;
  for (char c : kMagic) w.pod(c);
  w.pod(kCheckpointFormatVersion);
  w.str(model.architecture_id());
  w.pod(static_cast<std::uint64_t>(model.num_classes()));
  w.pod(static_cast<std::uint64_t>(model.group_names().size()));
  for (const auto& g : model.group_names()) w.str(g);
  w.pod(static_cast<std::uint64_t>(model.parameters().size()));
  for (const auto& p : model.parameters()) {
    w.str(p.name);
    w.pod(static_cast<std::uint64_t>(p.shape.size()));
    for (Index d : p.shape) w.pod(static_cast<std::int64_t>(d));
    for (Index i = 0; i < p.values.size(); ++i) w.pod(static_cast<double>(p.values(i)));
  }
  w.pod(static_cast<std::uint64_t>(model.metadata().size()));
  for (const auto& [k, v] : model.metadata()) {
    w.str(k);
    w.str(v);
  }
  write_file_atomic(path, w.bytes());
}

template <typename Scalar>
Model<Scalar> load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing checkpoint: " + path.string());
  Reader r(read_file(path), path);
  for (char c : kMagic)
    if (r.pod<char>() != c) r.fail("bad magic");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointFormatVersion)
    throw IncompatibleError("checkpoint " + path.string() + " has format version " + std::to_string(version) +
                            ", this build reads version " + std::to_string(kCheckpointFormatVersion));
  const std::string arch = r.str();
  const auto num_classes = static_cast<Index>(r.pod<std::uint64_t>());
  Model<Scalar> model(find_architecture(arch), num_classes);
  const auto groups = r.pod<std::uint64_t>();
  if (groups != model.group_names().size()) r.fail("group count");
  for (const auto& g : model.group_names())
    if (r.str() != g) r.fail("group name");
  const auto count = r.pod<std::uint64_t>();
  if (count != model.parameters().size()) r.fail("parameter count");
  for (auto& p : model.parameters()) {
    if (r.str() != p.name) r.fail("parameter name, expected " + p.name);
    const auto ndim = r.pod<std::uint64_t>();
    if (ndim != p.shape.size()) r.fail("rank of " + p.name);
    for (Index d : p.shape)
      if (r.pod<std::int64_t>() != d) r.fail("shape of " + p.name);
    for (Index i = 0; i < p.values.size(); ++i) p.values(i) = static_cast<Scalar>(r.pod<double>());
  }
  const auto meta = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < meta; ++i) {
    std::string k = r.str();
    model.metadata()[k] = r.str();
  }
  if (!r.done()) r.fail("trailing bytes");
  return model;
}

template void save_checkpoint<float>(const Model<float>&, const fs::path&);
template void save_checkpoint<double>(const Model<double>&, const fs::path&);
template Model<float> load_checkpoint<float>(const fs::path&);
template Model<double> load_checkpoint<double>(const fs::path&);

}  // namespace atalp
