#include "clab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "clab/config.hpp"

namespace clab {
namespace {

constexpr char kMagic[8] = {'C', 'L', 'A', 'B', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void raw(const void* data, std::size_t n) { out_.append(static_cast<const char*>(data), n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void raw(void* data, std::size_t n) {
    need(n);
    std::memcpy(data, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw std::runtime_error("checkpoint: truncated file");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

void write_section(Writer& w, const std::string& name, const ConstNamedTensors<float>& tensors) {
  w.str(name);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [tname, t] : tensors) {
    w.str(tname);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t->rank()));
    for (auto d : t->shape()) w.pod<std::uint64_t>(d);
    w.raw(t->data(), t->size() * sizeof(float));
  }
}

using Section = std::map<std::string, Tensor<float>>;

Section read_section(Reader& r) {
  Section out;
  const auto n = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.str();
    const auto rank = r.pod<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.pod<std::uint64_t>();
    Tensor<float> t(shape);
    r.raw(t.data(), t.size() * sizeof(float));
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

void fill_from(const Section& section, const std::string& section_name, NamedTensors<float> targets) {
  if (section.size() != targets.size()) {
    throw std::runtime_error("checkpoint: section '" + section_name + "' holds " + std::to_string(section.size()) +
                             " tensors, the config expects " + std::to_string(targets.size()));
  }
  for (auto& [name, t] : targets) {
    auto it = section.find(name);
    if (it == section.end()) throw std::runtime_error("checkpoint: section '" + section_name + "' lacks " + name);
    if (it->second.shape() != t->shape()) {
      throw std::runtime_error("checkpoint: " + name + " has shape " + shape_string(it->second.shape()) +
                               ", the config expects " + shape_string(t->shape()));
    }
    *t = it->second;
  }
}

void write_detector(Writer& w, const Checkpoint& ckpt) {
  write_section(w, "detector", ckpt.detector.named());
  write_section(w, "detector.momentum", ckpt.detector_momentum.named());
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(kVersion);
  w.pod<std::uint64_t>(ckpt.config_hash);
  w.pod<std::int64_t>(ckpt.step);
  nlohmann::json meta = {{"seed", ckpt.seed}, {"detector", to_json(ckpt.detector_config)}};
  meta["cab"] = ckpt.cab_config ? to_json(*ckpt.cab_config) : nlohmann::json(nullptr);
  w.str(meta.dump());
  const bool aux = ckpt.cab.has_value();
  w.pod<std::uint32_t>(aux ? 4 : 2);
  write_detector(w, ckpt);
  if (aux) {
    if (!ckpt.cab_momentum) throw std::invalid_argument("checkpoint: auxiliary branch without optimizer state");
    write_section(w, "cab", ckpt.cab->named());
    write_section(w, "cab.momentum", ckpt.cab_momentum->named());
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  char magic[8];
  r.raw(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw std::runtime_error("checkpoint: bad magic");
  if (const auto v = r.pod<std::uint32_t>(); v != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(v));
  }
  Checkpoint ckpt;
  ckpt.config_hash = r.pod<std::uint64_t>();
  ckpt.step = r.pod<std::int64_t>();
  const auto meta = nlohmann::json::parse(r.str());
  ckpt.seed = meta.at("seed").get<std::uint64_t>();
  ckpt.detector_config = detector_config_from_json(meta.at("detector"));
  if (!meta.at("cab").is_null()) ckpt.cab_config = cab_config_from_json(meta.at("cab"));
  ckpt.detector = DetectorParams<float>(ckpt.detector_config);
  ckpt.detector_momentum = DetectorParams<float>(ckpt.detector_config);

  const auto sections = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < sections; ++i) {
    const std::string name = r.str();
    const Section s = read_section(r);
    if (name == "detector") {
      fill_from(s, name, ckpt.detector.named());
    } else if (name == "detector.momentum") {
      fill_from(s, name, ckpt.detector_momentum.named());
    } else if (name == "cab" || name == "cab.momentum") {
      if (!ckpt.cab_config) throw std::runtime_error("checkpoint: auxiliary section without its config");
      auto& slot = name == "cab" ? ckpt.cab : ckpt.cab_momentum;
      slot.emplace(*ckpt.cab_config);
      fill_from(s, name, slot->named());
    } else {
      throw std::runtime_error("checkpoint: unknown section '" + name + "'");
    }
  }
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + tmp.string());
    const std::string bytes = serialize_checkpoint(ckpt);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

Checkpoint strip_auxiliary_branch(Checkpoint ckpt) {
  ckpt.cab.reset();
  ckpt.cab_momentum.reset();
  ckpt.cab_config.reset();
  return ckpt;
}

std::string detector_state_bytes(const Checkpoint& ckpt) {
  Writer w;
  w.pod<std::int64_t>(ckpt.step);
  w.str(to_json(ckpt.detector_config).dump());
  write_detector(w, ckpt);
  return w.take();
}

}  // namespace clab
