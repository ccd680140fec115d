#include "wmage/nn/checkpoint.hpp"

#include <cstring>

#include "wmage/config.hpp"
#include "wmage/error.hpp"

namespace wmage::nn {
namespace {

constexpr char kMagic[8] = {'W', 'M', 'A', 'G', 'E', 'C', 'K', 'P'};

template <class T>
void put(Bytes& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(Errc::BadCheckpoint, "checkpoint is truncated");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

Bytes encode_checkpoint(const Checkpoint& ckpt) {
  Bytes out(kMagic, kMagic + 8);
  put<std::uint32_t>(out, ckpt.format_version);
  std::string meta;
  for (const auto& [k, v] : ckpt.metadata) meta += k + " = " + v + "\n";
  put<std::uint32_t>(out, std::uint32_t(meta.size()));
  out.insert(out.end(), meta.begin(), meta.end());
  put<std::uint32_t>(out, std::uint32_t(ckpt.arrays.size()));
  for (const auto& a : ckpt.arrays) {
    if (shape_numel(a.shape) != a.values.size())
      throw Error(Errc::BadCheckpoint, "array '" + a.name + "' has inconsistent shape");
    put<std::uint32_t>(out, std::uint32_t(a.name.size()));
    out.insert(out.end(), a.name.begin(), a.name.end());
    put<std::uint32_t>(out, std::uint32_t(a.shape.size()));
    for (auto d : a.shape) put<std::uint64_t>(out, d);
    const auto* p = reinterpret_cast<const std::uint8_t*>(a.values.data());
    out.insert(out.end(), p, p + a.values.size() * sizeof(double));
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw Error(Errc::BadCheckpoint, "not a checkpoint file (bad magic)");
  Reader r(bytes.subspan(8));
  Checkpoint ckpt;
  ckpt.format_version = r.get<std::uint32_t>();
  if (ckpt.format_version != kCheckpointVersion)
    throw Error(Errc::BadCheckpoint, "unsupported checkpoint version " + std::to_string(ckpt.format_version));
  const auto meta_len = r.get<std::uint32_t>();
  ckpt.metadata = KeyValueConfig::parse(r.get_string(meta_len)).entries();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.get_string(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank > 16) throw Error(Errc::BadCheckpoint, "implausible rank for '" + a.name + "'");
    for (std::uint32_t k = 0; k < rank; ++k) a.shape.push_back(std::size_t(r.get<std::uint64_t>()));
    const auto n = shape_numel(a.shape);
    if (n > (std::size_t(1) << 34)) throw Error(Errc::BadCheckpoint, "implausible size for '" + a.name + "'");
    a.values.resize(n);
    for (auto& v : a.values) v = r.get<double>();
    ckpt.arrays.push_back(std::move(a));
  }
  if (!r.at_end()) throw Error(Errc::BadCheckpoint, "trailing bytes after checkpoint payload");
  return ckpt;
}

void append_optimizer_state(Checkpoint& ckpt, std::span<const Parameter> params, const OptimizerState& state) {
  ckpt.metadata["adam.lr"] = format_double(state.lr);
  ckpt.metadata["adam.beta1"] = format_double(state.beta1);
  ckpt.metadata["adam.beta2"] = format_double(state.beta2);
  ckpt.metadata["adam.epsilon"] = format_double(state.epsilon);
  ckpt.metadata["adam.t"] = std::to_string(state.t);
  ckpt.metadata["adam.weight_decay"] = format_double(state.weight_decay);
  if (state.m.empty()) return;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ckpt.arrays.push_back({"adam/m/" + params[i].name, params[i].tensor.shape(), state.m[i]});
    ckpt.arrays.push_back({"adam/v/" + params[i].name, params[i].tensor.shape(), state.v[i]});
  }
}

OptimizerState read_optimizer_state(const Checkpoint& ckpt, std::span<const Parameter> params) {
  auto meta = [&](const std::string& key) -> std::string {
    auto it = ckpt.metadata.find(key);
    if (it == ckpt.metadata.end()) throw Error(Errc::BadCheckpoint, "checkpoint lacks " + key);
    return it->second;
  };
  OptimizerState state(parse_double(meta("adam.lr"), "adam.lr"));
  state.beta1 = parse_double(meta("adam.beta1"), "adam.beta1");
  state.beta2 = parse_double(meta("adam.beta2"), "adam.beta2");
  state.epsilon = parse_double(meta("adam.epsilon"), "adam.epsilon");
  state.t = parse_int(meta("adam.t"), "adam.t");
  if (auto it = ckpt.metadata.find("adam.weight_decay"); it != ckpt.metadata.end())
    state.weight_decay = parse_double(it->second, "adam.weight_decay");
  for (const auto& p : params) {
    const auto* m = ckpt.find("adam/m/" + p.name);
    const auto* v = ckpt.find("adam/v/" + p.name);
    if (!m || !v) {
      if (state.m.empty()) continue;
      throw Error(Errc::BadCheckpoint, "optimizer moments missing for '" + p.name + "'");
    }
    if (m->values.size() != p.tensor.numel() || v->values.size() != p.tensor.numel())
      throw Error(Errc::BadCheckpoint, "optimizer moments for '" + p.name + "' have the wrong size");
    state.m.push_back(m->values);
    state.v.push_back(v->values);
  }
  if (!state.m.empty() && state.m.size() != params.size())
    throw Error(Errc::BadCheckpoint, "optimizer moments cover only some parameters");
  return state;
}

}  // namespace wmage::nn
