#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "pocketcm/consistency.hpp"
#include "pocketcm/mol.hpp"
#include "pocketcm/rlcm.hpp"

namespace pocketcm {

// Configuration validation failure; the CLI maps this to exit code 3.
struct ConfigError : std::runtime_error {
  std::string field;
  ConfigError(std::string field_, const std::string& message)
      : std::runtime_error("config field '" + field_ + "': " + message), field(std::move(field_)) {}
};

// Every tunable of the engine, serialized verbatim into run outputs.
struct RunConfig {
  std::size_t layers = 4;
  std::size_t hidden = 64;

  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double sigma_data = 0.5;
  double rho = 7.0;
  std::size_t train_grid_steps = 50;  // constant N(k)
  double ema_decay = 0.99;            // constant mu(k)

  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.995;
  double adam_eps = 1e-8;
  double max_grad_norm = 10.0;
  std::size_t batch_size = 4;
  std::size_t train_steps = 2000;

  double rlcm_lr = 1e-5;
  double clip_range = 1e-4;
  std::size_t inner_epochs = 1;
  std::size_t buffer_size = 32;
  std::size_t min_count = 16;
  std::size_t horizon = 5;
  std::size_t rollouts_per_context = 16;
  std::size_t update_trajs_per_context = 16;
  std::size_t minibatches = 4;
  std::size_t iterations = 200;

  std::size_t sample_steps = 50;
  std::size_t metric_start = 1;
  bool variance_difference_renoise = false;
  bool sample_with_ema = true;

  SizeParams sizes;
  std::size_t threads = 2;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError naming the offending field
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);  // unknown fields rejected

  DenoiserConfig denoiser() const;
  NoiseSchedule schedule() const;
  TrainerConfig trainer() const;
  RlcmConfig rlcm() const;
};

// Complex JSON: {"format_version":1, "atoms":[{"element","xyz","role"},...],
// "scaffold_mask":[...]}. Unknown fields, unknown elements and version
// mismatches are structured errors naming the offending field or atom.
void write_complex_json(const std::string& path, const ComplexGraph& graph,
                        const std::vector<std::uint8_t>& scaffold_mask);
SynthesizedComplex read_complex_json(const std::string& path);
nlohmann::json complex_to_json(const ComplexGraph& graph, const std::vector<std::uint8_t>& mask);
SynthesizedComplex complex_from_json(const nlohmann::json& j, const std::string& where);

constexpr std::uint32_t kComplexFormatVersion = 1;
constexpr char kCheckpointMagic[4] = {'T', 'H', 'C', 'M'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t step = 0;
  std::string config_json;  // RunConfig snapshot
  ParamSet online;          // theta
  ParamSet ema;             // theta^-
};

// Little-endian binary with "THCM" magic; save -> load -> save is
// byte-identical. Distinct errors for bad magic, truncation and version
// mismatch; shape validation against a config names the offending tensor.
void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);
void validate_checkpoint_shapes(const Checkpoint& checkpoint, const ParamSet& expected);

// write-temp-then-rename
void atomic_write_file(const std::string& path, const std::string& contents);
std::string read_file(const std::string& path);

std::uint64_t content_hash_bytes(const std::string& bytes);
std::uint64_t content_hash_file(const std::string& path);
std::string hash_hex(std::uint64_t h);

// Fixed %.17g double formatting so CSV outputs round-trip and reruns are
// byte-identical.
std::string format_double(double v);

}  // namespace pocketcm
