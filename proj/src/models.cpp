#include "lava/models.hpp"

#include "lava/rng.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <utility>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace lava {

void Architecture::validate() const {
  if (input_dim < 1 || output_dim < 1) {
    throw ContractError("architecture: input and output dims must be >= 1");
  }
  if (hidden.empty()) {
    throw ContractError("architecture: at least one hidden layer required");
  }
  for (int h : hidden) {
    if (h < 1) throw ContractError("architecture: hidden width must be >= 1");
  }
  if (mode == AdaptMode::Context) {
    const bool ok = context_dim == 0 || context_dim == 2 || context_dim == 4 ||
                    context_dim == 8 || context_dim == 16;
    if (!ok) {
      throw ContractError("architecture: context dim must be in {2,4,8,16}");
    }
  } else if (context_dim != 0) {
    throw ContractError("architecture: context dim requires context mode");
  }
}

std::vector<const Matrix*> MetaParams::tensors() const {
  std::vector<const Matrix*> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(&weights[i]);
    out.push_back(&biases[i]);
  }
  if (arch.mode == AdaptMode::LastLayer) {
    out.push_back(&head);
  } else {
    out.push_back(&context);
  }
  return out;
}

std::vector<Matrix*> MetaParams::tensors() {
  std::vector<Matrix*> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(&weights[i]);
    out.push_back(&biases[i]);
  }
  if (arch.mode == AdaptMode::LastLayer) {
    out.push_back(&head);
  } else {
    out.push_back(&context);
  }
  return out;
}

std::vector<std::string> MetaParams::tensor_names() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back("body.w" + std::to_string(i));
    out.push_back("body.b" + std::to_string(i));
  }
  out.push_back(arch.mode == AdaptMode::LastLayer ? "head" : "context");
  return out;
}

MetaParams init_params(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(derive_seed(seed, seed_component::model_init));
  MetaParams p;
  p.arch = arch;

  std::vector<int> dims;
  dims.push_back(arch.mlp_input_dim());
  for (int h : arch.hidden) dims.push_back(h);
  if (arch.mode == AdaptMode::Context) dims.push_back(arch.output_dim);

  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int fan_in = dims[l];
    const int fan_out = dims[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix w(fan_in, fan_out);
    for (Index i = 0; i < w.rows(); ++i) {
      for (Index j = 0; j < w.cols(); ++j) {
        w(i, j) = rng.uniform(-bound, bound);
      }
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(Matrix::Zero(1, fan_out));
  }

  if (arch.mode == AdaptMode::LastLayer) {
    const int cols = arch.head_cols();
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    Matrix head(arch.output_dim, cols);
    for (Index i = 0; i < head.rows(); ++i) {
      for (Index j = 0; j < head.cols(); ++j) {
        head(i, j) = rng.uniform(-bound, bound);
      }
    }
    p.head = std::move(head);
  } else {
    p.context = Matrix::Zero(1, arch.context_dim);
  }
  return p;
}

namespace {

// Bias broadcast as a primitive composition: ones(batch,1) * b.
Matrix broadcast_rows(const Matrix& row, Index batch) {
  return ad::ops::matmul(Matrix::Ones(batch, 1), row);
}

Matrix hidden_stack(const MetaParams& p, Matrix h) {
  const std::size_t n_hidden = p.arch.hidden.size();
  for (std::size_t l = 0; l < n_hidden; ++l) {
    h = ad::ops::relu(ad::ops::add(ad::ops::matmul(h, p.weights[l]),
                                   broadcast_rows(p.biases[l], h.rows())));
  }
  return h;
}

}  // namespace

Matrix features(const MetaParams& params, const Matrix& x) {
  if (x.cols() != params.arch.input_dim) {
    throw DimensionError("features: input has " + std::to_string(x.cols()) +
                         " columns, architecture expects " +
                         std::to_string(params.arch.input_dim));
  }
  return ad::ops::append_ones(hidden_stack(params, x));
}

Matrix head_forward(const Matrix& theta, const Matrix& z) {
  return ad::ops::matmul(z, ad::ops::transpose(theta));
}

Matrix context_forward(const MetaParams& params, const Matrix& phi,
                       const Matrix& x) {
  if (phi.cols() != params.arch.context_dim || phi.rows() != 1) {
    throw DimensionError("context_forward: context must be 1x" +
                         std::to_string(params.arch.context_dim));
  }
  Matrix h = phi.cols() == 0
                 ? x
                 : ad::ops::concat_cols(x, broadcast_rows(phi, x.rows()));
  h = hidden_stack(params, h);
  const std::size_t last = params.weights.size() - 1;
  return ad::ops::add(ad::ops::matmul(h, params.weights[last]),
                      broadcast_rows(params.biases[last], h.rows()));
}

ParamVars param_leaves(ad::Tape& tape, const MetaParams& params) {
  ParamVars pv;
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    pv.weights.push_back(tape.leaf(params.weights[i]));
    pv.biases.push_back(tape.leaf(params.biases[i]));
  }
  if (params.arch.mode == AdaptMode::LastLayer) {
    pv.head = tape.leaf(params.head);
  } else {
    pv.context = tape.leaf(params.context);
  }
  return pv;
}

namespace {

ad::Var hidden_stack(ad::Tape& tape, const Architecture& arch,
                     const ParamVars& pv, ad::Var h) {
  const Index batch = h.value().rows();
  ad::Var ones = tape.leaf(Matrix::Ones(batch, 1));
  for (std::size_t l = 0; l < arch.hidden.size(); ++l) {
    ad::Var pre = ad::add(ad::matmul(h, pv.weights[l]),
                          ad::matmul(ones, pv.biases[l]));
    h = ad::relu(pre);
  }
  return h;
}

}  // namespace

ad::Var features(ad::Tape& tape, const Architecture& arch,
                 const ParamVars& params, ad::Var x) {
  return ad::append_ones(hidden_stack(tape, arch, params, x));
}

ad::Var context_forward(ad::Tape& tape, const Architecture& arch,
                        const ParamVars& params, ad::Var phi, ad::Var x) {
  const Index batch = x.value().rows();
  ad::Var ones = tape.leaf(Matrix::Ones(batch, 1));
  ad::Var h = arch.context_dim == 0
                  ? x
                  : ad::concat_cols(x, ad::matmul(ones, phi));
  h = hidden_stack(tape, arch, params, h);
  const std::size_t last = params.weights.size() - 1;
  return ad::add(ad::matmul(h, params.weights[last]),
                 ad::matmul(ones, params.biases[last]));
}

namespace {

constexpr char kMagic[8] = {'L', 'A', 'V', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_i32(std::ofstream& out, std::int32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

std::int32_t read_i32(std::ifstream& in) {
  std::int32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const MetaParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(params.arch.mode));
  write_i32(out, params.arch.input_dim);
  write_i32(out, params.arch.output_dim);
  write_i32(out, static_cast<std::int32_t>(params.arch.hidden.size()));
  for (int h : params.arch.hidden) write_i32(out, h);
  write_i32(out, params.arch.context_dim);
  const auto tensors = params.tensors();
  write_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const Matrix* t : tensors) {
    write_u32(out, static_cast<std::uint32_t>(t->rows()));
    write_u32(out, static_cast<std::uint32_t>(t->cols()));
    for (Index i = 0; i < t->rows(); ++i) {
      for (Index j = 0; j < t->cols(); ++j) {
        const double v = (*t)(i, j);
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
    }
  }
  if (!out) throw ConfigError("checkpoint write failed: " + path);
}

MetaParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint: " + path);
  char magic[8] = {};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ConfigError("checkpoint magic mismatch: " + path);
  }
  const std::uint32_t version = read_u32(in);
  if (version != kVersion) {
    throw ConfigError("unsupported checkpoint version " +
                      std::to_string(version));
  }
  Architecture arch;
  arch.mode = static_cast<AdaptMode>(read_u32(in));
  arch.input_dim = read_i32(in);
  arch.output_dim = read_i32(in);
  const int n_hidden = read_i32(in);
  if (!in || n_hidden < 1 || n_hidden > 64) {
    throw ConfigError("checkpoint arch descriptor corrupt: " + path);
  }
  arch.hidden.clear();
  for (int i = 0; i < n_hidden; ++i) arch.hidden.push_back(read_i32(in));
  arch.context_dim = read_i32(in);
  arch.validate();

  MetaParams params = init_params(arch, 0);
  auto tensors = params.tensors();
  const auto names = params.tensor_names();
  const std::uint32_t count = read_u32(in);
  if (count != tensors.size()) {
    throw ConfigError("checkpoint tensor count " + std::to_string(count) +
                      " does not match architecture (expected " +
                      std::to_string(tensors.size()) + ")");
  }
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    const std::uint32_t rows = read_u32(in);
    const std::uint32_t cols = read_u32(in);
    Matrix* m = tensors[t];
    if (rows != static_cast<std::uint32_t>(m->rows()) ||
        cols != static_cast<std::uint32_t>(m->cols())) {
      throw ConfigError("checkpoint tensor '" + names[t] + "' is " +
                        std::to_string(rows) + "x" + std::to_string(cols) +
                        ", architecture expects " + std::to_string(m->rows()) +
                        "x" + std::to_string(m->cols()));
    }
    for (Index i = 0; i < m->rows(); ++i) {
      for (Index j = 0; j < m->cols(); ++j) {
        double v = 0.0;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        (*m)(i, j) = v;
      }
    }
  }
  if (!in) throw ConfigError("checkpoint truncated: " + path);
  return params;
}

}  // namespace lava
