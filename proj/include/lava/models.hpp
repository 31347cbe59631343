#pragma once

#include "lava/autodiff.hpp"
#include "lava/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace lava {

enum class AdaptMode : std::uint8_t { LastLayer = 0, Context = 1 };

struct Architecture {
  int input_dim = 1;
  int output_dim = 1;
  std::vector<int> hidden = {64, 64, 64};
  int context_dim = 0;
  AdaptMode mode = AdaptMode::LastLayer;

  int feature_dim() const { return hidden.back(); }
  int head_cols() const { return feature_dim() + 1; }
  /// First-layer input width; context mode concatenates the context vector.
  int mlp_input_dim() const {
    return mode == AdaptMode::Context ? input_dim + context_dim : input_dim;
  }
  /// Body layers carry ReLU; context mode owns a final linear layer too.
  int body_layers() const {
    return static_cast<int>(hidden.size()) +
           (mode == AdaptMode::Context ? 1 : 0);
  }
  void validate() const;
  bool operator==(const Architecture&) const = default;
};

/// Meta-learned prior: body weights, plus either the head initialization
/// (last-layer adaptation) or the context prior (context adaptation).
struct MetaParams {
  Architecture arch;
  std::vector<Matrix> weights;  // per layer, (in x out)
  std::vector<Matrix> biases;   // per layer, (1 x out)
  Matrix head;     // k x (d+1), last-layer mode
  Matrix context;  // 1 x c, context mode

  /// Tensors in declaration order (body pairs, then head or context).
  std::vector<const Matrix*> tensors() const;
  std::vector<Matrix*> tensors();
  std::vector<std::string> tensor_names() const;
};

/// Deterministic in seed: fan-in-scaled uniform weights, zero biases,
/// zero context prior.
MetaParams init_params(const Architecture& arch, std::uint64_t seed);

// Untaped forward paths.

/// Penultimate activations with a trailing ones column: batch x (d+1).
Matrix features(const MetaParams& params, const Matrix& x);
/// z theta^T: batch x k.
Matrix head_forward(const Matrix& theta, const Matrix& z);
/// Full MLP on [x | phi broadcast to batch]: batch x k.
Matrix context_forward(const MetaParams& params, const Matrix& phi,
                       const Matrix& x);

// Taped forward paths over parameter leaves.

struct ParamVars {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
  ad::Var head;
  ad::Var context;
};

ParamVars param_leaves(ad::Tape& tape, const MetaParams& params);

ad::Var features(ad::Tape& tape, const Architecture& arch,
                 const ParamVars& params, ad::Var x);
ad::Var context_forward(ad::Tape& tape, const Architecture& arch,
                        const ParamVars& params, ad::Var phi, ad::Var x);

// Checkpoint serialization: header (magic, version, arch descriptor), then
// tensors in declaration order as little-endian 64-bit floats, row-major.

void save_checkpoint(const std::string& path, const MetaParams& params);
MetaParams load_checkpoint(const std::string& path);

}  // namespace lava
