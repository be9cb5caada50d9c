#include "pocketcm/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace pocketcm {

namespace {

void check_range(bool ok, const char* field, const char* message) {
  if (!ok) throw ConfigError(field, message);
}

const char* role_name(AtomRole role) {
  switch (role) {
    case AtomRole::Pocket: return "pocket";
    case AtomRole::FunctionalGroup: return "functional-group";
    case AtomRole::Scaffold: return "scaffold";
  }
  return "?";
}

bool role_from_name(const std::string& name, AtomRole& out) {
  if (name == "pocket") out = AtomRole::Pocket;
  else if (name == "functional-group") out = AtomRole::FunctionalGroup;
  else if (name == "scaffold") out = AtomRole::Scaffold;
  else return false;
  return true;
}

void reject_unknown_keys(const nlohmann::json& obj, const std::vector<std::string>& allowed,
                         const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const std::string& k : allowed) ok = ok || k == it.key();
    if (!ok) throw std::runtime_error(where + ": unknown field '" + it.key() + "'");
  }
}

template <typename T>
T get_field(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw std::runtime_error(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(where + ": field '" + key + "': " + e.what());
  }
}

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  append_u64(out, bits);
}

struct Reader {
  const std::string& data;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    if (pos + n > data.size())
      throw std::runtime_error(std::string("checkpoint truncated while reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64(const char* what) {
    const std::uint64_t bits = u64(what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string out = data.substr(pos, n);
    pos += n;
    return out;
  }
};

void append_params(std::string& out, const ParamSet& params) {
  append_u32(out, static_cast<std::uint32_t>(params.items.size()));
  for (const auto& [name, tensor] : params.items) {
    append_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    append_u32(out, static_cast<std::uint32_t>(tensor.shape.size()));
    for (std::size_t d : tensor.shape) append_u64(out, d);
    for (double v : tensor.values) append_f64(out, v);
  }
}

ParamSet read_params(Reader& r) {
  ParamSet params;
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32("tensor name length");
    const std::string name = r.bytes(name_len, "tensor name");
    const std::uint32_t rank = r.u32("tensor rank");
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) shape[d] = r.u64("tensor dim");
    Tensor t(shape);
    for (double& v : t.values) v = r.f64("tensor data");
    params[name] = std::move(t);
  }
  return params;
}

}  // namespace

void RunConfig::validate() const {
  check_range(layers >= 1 && layers <= 16, "layers", "expected 1..16");
  check_range(hidden >= 4 && hidden <= 1024, "hidden", "expected 4..1024");
  check_range(sigma_min > 0 && sigma_min < sigma_max, "sigma_min", "expected 0 < sigma_min < sigma_max");
  check_range(sigma_max <= 1000, "sigma_max", "expected <= 1000");
  check_range(sigma_data > 0, "sigma_data", "expected positive");
  check_range(rho >= 1 && rho <= 20, "rho", "expected 1..20");
  check_range(train_grid_steps >= 2 && train_grid_steps <= 1000, "train_grid_steps", "expected 2..1000");
  check_range(ema_decay > 0 && ema_decay < 1, "ema_decay", "expected in (0,1)");
  check_range(lr >= 0 && lr <= 1, "lr", "expected in [0,1]");
  check_range(beta1 > 0 && beta1 < 1, "beta1", "expected in (0,1)");
  check_range(beta2 > 0 && beta2 < 1, "beta2", "expected in (0,1)");
  check_range(adam_eps > 0, "adam_eps", "expected positive");
  check_range(max_grad_norm > 0, "max_grad_norm", "expected positive");
  check_range(batch_size >= 1 && batch_size <= 1024, "batch_size", "expected 1..1024");
  check_range(rlcm_lr >= 0 && rlcm_lr <= 1, "rlcm_lr", "expected in [0,1]");
  check_range(clip_range > 0 && clip_range < 1, "clip_range", "expected in (0,1)");
  check_range(inner_epochs >= 1 && inner_epochs <= 64, "inner_epochs", "expected 1..64");
  check_range(buffer_size >= 1, "buffer_size", "expected >= 1");
  check_range(min_count >= 1 && min_count <= buffer_size, "min_count", "expected 1..buffer_size");
  check_range(horizon >= 1 && horizon <= 512, "horizon", "expected 1..512");
  check_range(rollouts_per_context >= 1, "rollouts_per_context", "expected >= 1");
  check_range(update_trajs_per_context >= 1, "update_trajs_per_context", "expected >= 1");
  check_range(minibatches >= 1, "minibatches", "expected >= 1");
  check_range(sample_steps >= 1 && sample_steps <= 10000, "sample_steps", "expected 1..10000");
  check_range(metric_start >= 1, "metric_start", "expected >= 1");
  check_range(threads >= 1 && threads <= 256, "threads", "expected 1..256");
  try {
    sizes.validate();
  } catch (const std::exception& e) {
    throw ConfigError("sizes", e.what());
  }
}

nlohmann::json RunConfig::to_json() const {
  return nlohmann::json{
      {"layers", layers},
      {"hidden", hidden},
      {"sigma_min", sigma_min},
      {"sigma_max", sigma_max},
      {"sigma_data", sigma_data},
      {"rho", rho},
      {"train_grid_steps", train_grid_steps},
      {"ema_decay", ema_decay},
      {"lr", lr},
      {"beta1", beta1},
      {"beta2", beta2},
      {"adam_eps", adam_eps},
      {"max_grad_norm", max_grad_norm},
      {"batch_size", batch_size},
      {"train_steps", train_steps},
      {"rlcm_lr", rlcm_lr},
      {"clip_range", clip_range},
      {"inner_epochs", inner_epochs},
      {"buffer_size", buffer_size},
      {"min_count", min_count},
      {"horizon", horizon},
      {"rollouts_per_context", rollouts_per_context},
      {"update_trajs_per_context", update_trajs_per_context},
      {"minibatches", minibatches},
      {"iterations", iterations},
      {"sample_steps", sample_steps},
      {"metric_start", metric_start},
      {"variance_difference_renoise", variance_difference_renoise},
      {"sample_with_ema", sample_with_ema},
      {"scaffold_min", sizes.scaffold_min},
      {"scaffold_max", sizes.scaffold_max},
      {"fg_groups_min", sizes.fg_groups_min},
      {"fg_groups_max", sizes.fg_groups_max},
      {"fg_size_min", sizes.fg_size_min},
      {"fg_size_max", sizes.fg_size_max},
      {"pocket_min", sizes.pocket_min},
      {"pocket_max", sizes.pocket_max},
      {"threads", threads},
      {"seed", seed},
  };
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig base;  // defaults
  const nlohmann::json defaults = base.to_json();
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!defaults.contains(it.key())) throw ConfigError(it.key(), "unknown field");

  RunConfig c;
  auto opt = [&](const char* key, auto& slot) {
    if (j.contains(key)) {
      try {
        slot = j.at(key).get<std::decay_t<decltype(slot)>>();
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(key, e.what());
      }
    }
  };
  opt("layers", c.layers);
  opt("hidden", c.hidden);
  opt("sigma_min", c.sigma_min);
  opt("sigma_max", c.sigma_max);
  opt("sigma_data", c.sigma_data);
  opt("rho", c.rho);
  opt("train_grid_steps", c.train_grid_steps);
  opt("ema_decay", c.ema_decay);
  opt("lr", c.lr);
  opt("beta1", c.beta1);
  opt("beta2", c.beta2);
  opt("adam_eps", c.adam_eps);
  opt("max_grad_norm", c.max_grad_norm);
  opt("batch_size", c.batch_size);
  opt("train_steps", c.train_steps);
  opt("rlcm_lr", c.rlcm_lr);
  opt("clip_range", c.clip_range);
  opt("inner_epochs", c.inner_epochs);
  opt("buffer_size", c.buffer_size);
  opt("min_count", c.min_count);
  opt("horizon", c.horizon);
  opt("rollouts_per_context", c.rollouts_per_context);
  opt("update_trajs_per_context", c.update_trajs_per_context);
  opt("minibatches", c.minibatches);
  opt("iterations", c.iterations);
  opt("sample_steps", c.sample_steps);
  opt("metric_start", c.metric_start);
  opt("variance_difference_renoise", c.variance_difference_renoise);
  opt("sample_with_ema", c.sample_with_ema);
  opt("scaffold_min", c.sizes.scaffold_min);
  opt("scaffold_max", c.sizes.scaffold_max);
  opt("fg_groups_min", c.sizes.fg_groups_min);
  opt("fg_groups_max", c.sizes.fg_groups_max);
  opt("fg_size_min", c.sizes.fg_size_min);
  opt("fg_size_max", c.sizes.fg_size_max);
  opt("pocket_min", c.sizes.pocket_min);
  opt("pocket_max", c.sizes.pocket_max);
  opt("threads", c.threads);
  opt("seed", c.seed);
  return c;
}

DenoiserConfig RunConfig::denoiser() const {
  DenoiserConfig d;
  d.layers = layers;
  d.hidden = hidden;
  d.sigma_data = sigma_data;
  return d;
}

NoiseSchedule RunConfig::schedule() const {
  NoiseSchedule s;
  s.sigma_min = sigma_min;
  s.sigma_max = sigma_max;
  s.sigma_data = sigma_data;
  s.rho = rho;
  return s;
}

TrainerConfig RunConfig::trainer() const {
  TrainerConfig t;
  t.adam = {lr, beta1, beta2, adam_eps};
  t.max_grad_norm = max_grad_norm;
  t.batch_size = batch_size;
  t.threads = threads;
  return t;
}

RlcmConfig RunConfig::rlcm() const {
  RlcmConfig r;
  r.adam = {rlcm_lr, beta1, beta2, adam_eps};
  r.clip_range = clip_range;
  r.inner_epochs = inner_epochs;
  r.buffer_size = buffer_size;
  r.min_count = min_count;
  r.rollouts_per_context = rollouts_per_context;
  r.update_trajs_per_context = update_trajs_per_context;
  r.minibatches = minibatches;
  r.max_grad_norm = max_grad_norm;
  r.threads = threads;
  r.variance_difference = variance_difference_renoise;
  return r;
}

nlohmann::json complex_to_json(const ComplexGraph& graph, const std::vector<std::uint8_t>& mask) {
  nlohmann::json atoms = nlohmann::json::array();
  for (const AtomRecord& a : graph.atoms) {
    atoms.push_back(nlohmann::json{{"element", element_name(a.element)},
                                   {"xyz", {a.position[0], a.position[1], a.position[2]}},
                                   {"role", role_name(a.role)}});
  }
  nlohmann::json m = nlohmann::json::array();
  for (std::uint8_t v : mask) m.push_back(static_cast<int>(v));
  return nlohmann::json{{"format_version", kComplexFormatVersion}, {"atoms", atoms}, {"scaffold_mask", m}};
}

SynthesizedComplex complex_from_json(const nlohmann::json& j, const std::string& where) {
  reject_unknown_keys(j, {"format_version", "atoms", "scaffold_mask"}, where);
  const auto version = get_field<std::uint32_t>(j, "format_version", where);
  if (version != kComplexFormatVersion)
    throw std::runtime_error(where + ": format_version " + std::to_string(version) +
                             " unsupported (expected " + std::to_string(kComplexFormatVersion) + ")");
  if (!j.contains("atoms")) throw std::runtime_error(where + ": missing field 'atoms'");
  if (!j.contains("scaffold_mask")) throw std::runtime_error(where + ": missing field 'scaffold_mask'");

  SynthesizedComplex out;
  std::size_t index = 0;
  for (const nlohmann::json& aj : j.at("atoms")) {
    const std::string atom_where = where + ": atoms[" + std::to_string(index) + "]";
    reject_unknown_keys(aj, {"element", "xyz", "role"}, atom_where);
    AtomRecord a;
    const auto element = get_field<std::string>(aj, "element", atom_where);
    if (!element_from_name(element, a.element))
      throw std::runtime_error(atom_where + ": unknown element '" + element + "'");
    const auto role = get_field<std::string>(aj, "role", atom_where);
    if (!role_from_name(role, a.role))
      throw std::runtime_error(atom_where + ": unknown role '" + role + "'");
    const auto xyz = get_field<std::vector<double>>(aj, "xyz", atom_where);
    if (xyz.size() != 3) throw std::runtime_error(atom_where + ": xyz must have 3 components");
    a.position = {xyz[0], xyz[1], xyz[2]};
    out.graph.atoms.push_back(a);
    ++index;
  }
  for (const nlohmann::json& mj : j.at("scaffold_mask"))
    out.scaffold_mask.push_back(mj.get<int>() ? 1 : 0);
  if (out.scaffold_mask.size() != out.graph.atoms.size())
    throw std::runtime_error(where + ": scaffold_mask length does not match atom count");
  out.graph.rebuild_derived();
  return out;
}

void write_complex_json(const std::string& path, const ComplexGraph& graph,
                        const std::vector<std::uint8_t>& scaffold_mask) {
  atomic_write_file(path, complex_to_json(graph, scaffold_mask).dump(2) + "\n");
}

SynthesizedComplex read_complex_json(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path + ": malformed JSON: " + e.what());
  }
  return complex_from_json(j, path);
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  append_u32(out, checkpoint.version);
  append_u64(out, checkpoint.step);
  append_u32(out, static_cast<std::uint32_t>(checkpoint.config_json.size()));
  out += checkpoint.config_json;
  append_params(out, checkpoint.online);
  append_params(out, checkpoint.ema);
  atomic_write_file(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string data = read_file(path);
  Reader r{data};
  const std::string magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0)
    throw std::runtime_error(path + ": bad magic (not a checkpoint file)");
  Checkpoint c;
  c.version = r.u32("version");
  if (c.version != kCheckpointVersion)
    throw std::runtime_error(path + ": checkpoint version " + std::to_string(c.version) +
                             " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
  c.step = r.u64("step");
  const std::uint32_t config_len = r.u32("config length");
  c.config_json = r.bytes(config_len, "config");
  c.online = read_params(r);
  c.ema = read_params(r);
  if (r.pos != data.size()) throw std::runtime_error(path + ": trailing bytes after checkpoint");
  return c;
}

void validate_checkpoint_shapes(const Checkpoint& checkpoint, const ParamSet& expected) {
  for (const auto& [name, tensor] : expected.items) {
    if (!checkpoint.online.contains(name))
      throw std::runtime_error("checkpoint missing tensor '" + name + "'");
    const Tensor& got = checkpoint.online.get(name);
    if (got.shape != tensor.shape)
      throw std::runtime_error("checkpoint tensor '" + name + "' has shape " + got.shape_str() +
                               ", config expects " + tensor.shape_str());
  }
  if (checkpoint.online.items.size() != expected.items.size() ||
      checkpoint.ema.items.size() != expected.items.size())
    throw std::runtime_error("checkpoint parameter count does not match config");
}

void atomic_write_file(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + tmp);
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!f) throw std::runtime_error("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("rename failed: " + tmp + " -> " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::uint64_t content_hash_bytes(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : bytes) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t content_hash_file(const std::string& path) { return content_hash_bytes(read_file(path)); }

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

}  // namespace pocketcm
