#include "muvit/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include <json.hpp>

namespace muvit {

using json = nlohmann::json;

// ---- config document ----------------------------------------------------

std::string config_to_json(const RunConfig& cfg) {
  nlohmann::ordered_json o;
  o["variant"] = to_string(cfg.model.variant);
  o["input_size"] = cfg.model.input_size;
  o["num_classes"] = cfg.model.num_classes;
  o["skip_mode"] = to_string(cfg.model.skip_mode);
  o["downsample_mode"] = to_string(cfg.model.downsample_mode);
  o["seed"] = cfg.seed;
  o["schedule"] = to_string(cfg.schedule);
  o["lr0"] = cfg.lr0;
  o["epochs"] = cfg.epochs;
  o["batch"] = cfg.batch;
  o["kernels"] = cfg.model.kernels;
  o["literal_order"] = cfg.model.literal_order;
  o["warmup_epochs"] = cfg.warmup_epochs;
  return o.dump();
}

namespace {

template <typename V>
V get_as(const json& j, const char* key) {
  try {
    return j.get<V>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

int get_int(const json& j, const char* key) {
  if (!j.is_number_integer()) throw ConfigError(std::string("config key '") + key + "' must be an integer");
  return get_as<int>(j, key);
}

}  // namespace

RunConfig config_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config document: ") + e.what(), static_cast<long long>(e.byte));
  }
  if (!doc.is_object()) throw ConfigError("config document must be a JSON object");

  static const std::set<std::string> known = {
      "variant", "input_size", "num_classes", "skip_mode", "downsample_mode", "seed", "schedule",
      "lr0",     "epochs",     "batch",       "kernels",   "literal_order",   "warmup_epochs"};
  for (const auto& [key, value] : doc.items()) {
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }

  RunConfig cfg;
  Variant variant = Variant::base;
  if (doc.contains("variant")) variant = parse_variant(get_as<std::string>(doc["variant"], "variant"));
  const int size = doc.contains("input_size") ? get_int(doc["input_size"], "input_size") : 256;
  cfg.model = ModelConfig::make(variant, size);
  if (doc.contains("num_classes")) cfg.model.num_classes = get_int(doc["num_classes"], "num_classes");
  if (doc.contains("skip_mode")) cfg.model.skip_mode = parse_skip_mode(get_as<std::string>(doc["skip_mode"], "skip_mode"));
  if (doc.contains("downsample_mode")) {
    cfg.model.downsample_mode = parse_downsample_mode(get_as<std::string>(doc["downsample_mode"], "downsample_mode"));
  }
  if (doc.contains("seed")) {
    if (!doc["seed"].is_number_unsigned() && !doc["seed"].is_number_integer()) {
      throw ConfigError("config key 'seed' must be an integer");
    }
    if (doc["seed"].is_number_integer() && doc["seed"].get<std::int64_t>() < 0) {
      throw ConfigError("config key 'seed' must be non-negative");
    }
    cfg.seed = doc["seed"].get<std::uint64_t>();
  }
  if (doc.contains("schedule")) cfg.schedule = parse_schedule(get_as<std::string>(doc["schedule"], "schedule"));
  if (doc.contains("lr0")) {
    if (!doc["lr0"].is_number()) throw ConfigError("config key 'lr0' must be a number");
    cfg.lr0 = doc["lr0"].get<double>();
  }
  if (doc.contains("epochs")) cfg.epochs = get_int(doc["epochs"], "epochs");
  if (doc.contains("batch")) cfg.batch = get_int(doc["batch"], "batch");
  if (doc.contains("warmup_epochs")) cfg.warmup_epochs = get_int(doc["warmup_epochs"], "warmup_epochs");
  if (doc.contains("kernels")) {
    const auto& k = doc["kernels"];
    if (!k.is_array() || k.size() != 3) throw ConfigError("config key 'kernels' must be an array of three integers");
    for (int i = 0; i < 3; ++i) cfg.model.kernels[i] = get_int(k[i], "kernels");
  }
  if (doc.contains("literal_order")) {
    if (!doc["literal_order"].is_boolean()) throw ConfigError("config key 'literal_order' must be a boolean");
    cfg.model.literal_order = doc["literal_order"].get<bool>();
  }

  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (cfg.batch < 1) throw ConfigError("batch must be >= 1");
  if (cfg.warmup_epochs < 0 || cfg.warmup_epochs > cfg.epochs) throw ConfigError("warmup_epochs must lie in [0, epochs]");
  if (!(cfg.lr0 >= 0.0)) throw ConfigError("lr0 must be non-negative");
  cfg.model.validate();
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return config_from_json(text);
}

// ---- binary format ------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'M', 'U', 'V', 'T'};

class Writer {
 public:
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}

  template <typename U>
  U uint(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) {
      throw ParseError(std::string("truncated checkpoint while reading ") + what, static_cast<long long>(pos_));
    }
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

const StoredTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

bool Checkpoint::has_optimizer() const { return find("optim/step") != nullptr; }

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.uint<std::uint32_t>(kCheckpointVersion);
  const auto doc = config_to_json(ckpt.config);
  w.uint<std::uint64_t>(doc.size());
  w.bytes(doc.data(), doc.size());
  w.uint<std::uint64_t>(ckpt.tensors.size());
  std::set<std::string> seen;
  for (const auto& t : ckpt.tensors) {
    if (!seen.insert(t.name).second) throw UsageError("duplicate tensor name '" + t.name + "'");
    if (t.name.size() > 0xffff) throw UsageError("tensor name too long");
    if (t.shape.size() > 255) throw UsageError("tensor rank too large");
    if (static_cast<std::int64_t>(t.values.size()) != shape_numel(t.shape)) {
      throw UsageError("tensor '" + t.name + "' values do not match its shape");
    }
    w.uint<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(t.dtype));
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.uint<std::uint64_t>(static_cast<std::uint64_t>(d));
    for (double v : t.values) {
      if (t.dtype == DType::f32) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        w.uint(bits);
      } else {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        w.uint(bits);
      }
    }
  }
  return std::move(w.out);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(4, "magic") != std::string(kMagic, 4)) throw ParseError("not a checkpoint (bad magic)", 0);
  const auto version = r.uint<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const auto doc_len = r.uint<std::uint64_t>("config length");
  const std::size_t doc_at = r.pos();
  Checkpoint ckpt;
  const auto doc = r.str(static_cast<std::size_t>(doc_len), "config document");
  try {
    ckpt.config = config_from_json(doc);
  } catch (const ParseError& e) {
    throw ParseError(std::string("checkpoint config: ") + e.what(), static_cast<long long>(doc_at));
  }
  const auto count = r.uint<std::uint64_t>("tensor count");
  std::set<std::string> seen;
  for (std::uint64_t k = 0; k < count; ++k) {
    StoredTensor t;
    const std::size_t at = r.pos();
    const auto len = r.uint<std::uint16_t>("tensor name length");
    t.name = r.str(len, "tensor name");
    if (!seen.insert(t.name).second) {
      throw ParseError("duplicate tensor name '" + t.name + "'", static_cast<long long>(at));
    }
    const auto dtype = r.uint<std::uint8_t>("dtype");
    if (dtype > 1) throw ParseError("unknown dtype " + std::to_string(dtype), static_cast<long long>(r.pos() - 1));
    t.dtype = static_cast<DType>(dtype);
    const auto ndim = r.uint<std::uint8_t>("ndim");
    std::uint64_t numel = 1;
    for (int d = 0; d < ndim; ++d) {
      const auto dim = r.uint<std::uint64_t>("dims");
      if (dim > (1ULL << 40)) throw ParseError("implausible dimension", static_cast<long long>(r.pos() - 8));
      t.shape.push_back(static_cast<std::int64_t>(dim));
      numel *= dim;
    }
    const std::size_t width = t.dtype == DType::f32 ? 4 : 8;
    r.need(static_cast<std::size_t>(numel) * width, "tensor values");
    t.values.resize(static_cast<std::size_t>(numel));
    for (auto& v : t.values) {
      if (t.dtype == DType::f32) {
        const auto bits = r.uint<std::uint32_t>("tensor values");
        float f;
        std::memcpy(&f, &bits, 4);
        v = f;
      } else {
        const auto bits = r.uint<std::uint64_t>("tensor values");
        std::memcpy(&v, &bits, 8);
      }
    }
    ckpt.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw ParseError("trailing bytes after the last tensor", static_cast<long long>(r.pos()));
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

// ---- model bridge -------------------------------------------------------

namespace {

template <typename T>
StoredTensor store(const std::string& name, const Tensor<T>& t) {
  StoredTensor s;
  s.name = name;
  s.dtype = dtype_of<T>();
  s.shape = t.shape();
  s.values.assign(t.data().begin(), t.data().end());
  return s;
}

template <typename T>
Tensor<T> load(const StoredTensor& s) {
  Tensor<T> t(s.shape);
  for (std::size_t i = 0; i < s.values.size(); ++i) t[i] = static_cast<T>(s.values[i]);
  return t;
}

}  // namespace

template <typename T>
Checkpoint make_checkpoint(const RunConfig& cfg, Model<T>& model, const Sgd<T>* optim) {
  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.config.model = model.config();
  for (const auto& s : model.state()) ckpt.tensors.push_back(store(s.name, s.tensor));
  if (optim != nullptr) {
    for (const auto& [name, t] : optim->state()) ckpt.tensors.push_back(store(name, t));
    StoredTensor step;
    step.name = "optim/step";
    step.dtype = DType::f64;
    step.values = {static_cast<double>(optim->steps())};
    ckpt.tensors.push_back(step);
  }
  return ckpt;
}

template <typename T>
void restore_model(const Checkpoint& ckpt, Model<T>& model) {
  std::vector<std::pair<std::string, Tensor<T>>> tensors;
  for (const auto& s : ckpt.tensors) {
    if (s.name.rfind("optim/", 0) == 0) continue;
    tensors.emplace_back(s.name, load<T>(s));
  }
  model.load_state(tensors);
}

template <typename T>
void restore_optimizer(const Checkpoint& ckpt, Sgd<T>& optim) {
  const auto* step = ckpt.find("optim/step");
  if (step == nullptr || step->values.size() != 1) throw ConfigError("checkpoint has no optimizer state");
  typename Sgd<T>::Named buffers;
  for (const auto& s : ckpt.tensors) {
    if (s.name.rfind("optim/", 0) == 0 && s.name != "optim/step") buffers.emplace_back(s.name, load<T>(s));
  }
  optim.load_state(buffers, static_cast<std::int64_t>(step->values[0]));
}

template Checkpoint make_checkpoint(const RunConfig&, Model<float>&, const Sgd<float>*);
template Checkpoint make_checkpoint(const RunConfig&, Model<double>&, const Sgd<double>*);
template void restore_model(const Checkpoint&, Model<float>&);
template void restore_model(const Checkpoint&, Model<double>&);
template void restore_optimizer(const Checkpoint&, Sgd<float>&);
template void restore_optimizer(const Checkpoint&, Sgd<double>&);

}  // namespace muvit
