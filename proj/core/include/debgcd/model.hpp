#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>

#include "debgcd/compute.hpp"
#include "debgcd/config.hpp"

namespace debgcd::model {

using compute::Matrix;
using compute::MlpSpec;
using compute::ParamSet;
using compute::Tape;
using compute::Var;

// Defaults for every hyperparameter.
Config default_config();

struct ModelDims {
  std::size_t dim = 0;          // d, input and adapter width
  std::size_t num_classes = 0;  // K
  std::size_t num_old = 0;      // M
};

// Parameter names.
inline constexpr const char* kAdapter = "adapter";
inline constexpr const char* kGcdPrototypes = "gcd.prototypes";
inline constexpr const char* kRepProjector = "rep";
inline constexpr const char* kSdlProjector = "sdl";
inline constexpr const char* kOvaPositive = "sdl.bank.pos";
inline constexpr const char* kOvaNegative = "sdl.bank.neg";
inline constexpr const char* kAdlPrototypes = "adl.prototypes";

// All trainable components:
//   adapter   residual 2-layer MLP over the frozen input embedding
//   gcd       K prototypes (self-distillation classifier)
//   rep       3-layer projector for the contrastive representation loss
//   sdl       5-layer projector plus M one-vs-all classifiers (pos/neg rows)
//   adl       K prototypes (debiased classifier)
// Prototype and classifier rows are stored unconstrained and normalized
// inside the forward pass.
class Model {
 public:
  Model(const ModelDims& dims, const Config& config, std::uint64_t seed);

  const ModelDims& dims() const { return dims_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const MlpSpec& adapter_spec() const { return adapter_; }
  const MlpSpec& rep_spec() const { return rep_; }
  const MlpSpec& sdl_spec() const { return sdl_; }

  // phi(x): raw + MLP(raw). Not normalized.
  Var adapter(Tape& tape, Var raw);
  // h = phi(x) / ||phi(x)||.
  Var forward_backbone(Tape& tape, Var raw);
  // h . normalize(C)^T for the GCD / debiased prototypes.
  Var gcd_cosines(Tape& tape, Var h);
  Var adl_cosines(Tape& tape, Var h);
  // Unit-norm projections used by the representation loss.
  Var rep_projection(Tape& tape, Var adapter_out);
  // f = normalize(rho_s(phi(x))).
  Var sdl_embedding(Tape& tape, Var adapter_out);
  Var ova_positive(Tape& tape) { return tape.param(params_.at(kOvaPositive)); }
  Var ova_negative(Tape& tape) { return tape.param(params_.at(kOvaNegative)); }

 private:
  ModelDims dims_;
  MlpSpec adapter_;
  MlpSpec rep_;
  MlpSpec sdl_;
  ParamSet params_;
};

// Widths used for a given configuration and input.
MlpSpec adapter_spec(const ModelDims& dims, const Config& config);
MlpSpec rep_spec(const ModelDims& dims, const Config& config);
MlpSpec sdl_spec(const ModelDims& dims, const Config& config);

// DGCK checkpoint: magic, u32 version, u32-length-prefixed config text
// (canonical key=value lines followed by dim/num_classes/num_old), u32
// parameter count, then per parameter (u32 name length, name, u32 rows,
// u32 cols, float64 payload). Little-endian throughout.
std::vector<std::uint8_t> encode_checkpoint(const Model& model, const Config& config);
std::pair<Config, Model> decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Model& model, const Config& config, const std::filesystem::path& path);
std::pair<Config, Model> load_checkpoint(const std::filesystem::path& path);

}  // namespace debgcd::model
