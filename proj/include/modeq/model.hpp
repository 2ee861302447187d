#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "modeq/alignment.hpp"
#include "modeq/autograd.hpp"
#include "modeq/blobio.hpp"
#include "modeq/errors.hpp"
#include "modeq/memory.hpp"
#include "modeq/rng.hpp"
#include "modeq/tensor.hpp"

namespace modeq {

enum class TrainMode { ours, joint, alt_plain, late_fusion };

inline const char* train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::ours: return "ours";
    case TrainMode::joint: return "joint";
    case TrainMode::alt_plain: return "alt-plain";
    case TrainMode::late_fusion: return "late-fusion";
  }
  return "?";
}

/// Two-layer relu MLP mapping raw modality features (d_i x m, column per
/// sample) to the shared feature width.
struct EncoderParams {
  Tensor w1, b1, w2, b2;  // hidden x d_i, hidden x 1, d_feat x hidden, d_feat x 1

  static EncoderParams init(int d_in, int hidden, int d_feat, std::mt19937_64& rng) {
    EncoderParams e;
    e.w1 = normal_tensor({hidden, d_in}, rng, std::sqrt(2.0 / d_in));
    e.b1 = Tensor::zeros({hidden, 1});
    e.w2 = normal_tensor({d_feat, hidden}, rng, std::sqrt(2.0 / hidden));
    e.b2 = Tensor::zeros({d_feat, 1});
    return e;
  }
};

/// Linear map from a feature space to class logits.
struct ClassifierParams {
  Tensor w, b;  // K x d, K x 1

  static ClassifierParams init(int d, int k, std::mt19937_64& rng) {
    ClassifierParams c;
    c.w = normal_tensor({k, d}, rng, std::sqrt(1.0 / d));
    c.b = Tensor::zeros({k, 1});
    return c;
  }
};

inline Tensor encode(const EncoderParams& p, const Tensor& input) {
  if (input.rows() != p.w1.cols()) {
    throw DimensionError("encode: input " + input.shape_str() +
                         " does not match encoder width " + p.w1.shape_str());
  }
  const Tensor h = relu(add_col_broadcast(matmul(p.w1, input), p.b1));
  return relu(add_col_broadcast(matmul(p.w2, h), p.b2));
}

inline Tensor classify(const ClassifierParams& p, const Tensor& features) {
  return add_col_broadcast(matmul(p.w, features), p.b);
}

enum class FuseKind { sum, concat };

inline Tensor fuse_baseline(FuseKind kind, const std::vector<Tensor>& features) {
  if (features.empty()) throw ConfigError("fuse_baseline: no feature matrices");
  Tensor out = features.front();
  for (std::size_t i = 1; i < features.size(); ++i) {
    out = kind == FuseKind::sum ? add(out, features[i])
                                : concat_rows(out, features[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameter bundle for one experiment. Which optional parts exist depends on
// the training mode; `param_refs` exposes a uniform named view for the
// optimizer, the freeze logic and the checkpoint writer.
// ---------------------------------------------------------------------------

struct ParamRef {
  std::string name;
  Tensor* tensor;
};

struct ModelParams {
  std::vector<EncoderParams> encoders;
  ClassifierParams head;                        // shared d_feat -> K
  std::optional<ClassifierParams> concat_head;  // joint baseline
  std::vector<ClassifierParams> modality_heads; // late fusion
  std::optional<MemoryCellParams> cell;         // memory-guided mode
  std::optional<GateParams> gate;               // learnable gate variant
  int d_feat = 0;
  int hidden = 0;
  int n_classes = 0;
  TrainMode mode = TrainMode::ours;

  static ModelParams init(const std::vector<int>& dims, int hidden, int d_feat,
                          int n_classes, TrainMode mode, bool use_gate,
                          std::uint64_t seed) {
    ModelParams p;
    p.d_feat = d_feat;
    p.hidden = hidden;
    p.n_classes = n_classes;
    p.mode = mode;
    auto rng = make_rng(derive_seed(seed, 0x6d6f64656cULL));
    for (int d : dims) p.encoders.push_back(EncoderParams::init(d, hidden, d_feat, rng));
    p.head = ClassifierParams::init(d_feat, n_classes, rng);
    if (mode == TrainMode::joint) {
      p.concat_head = ClassifierParams::init(
          d_feat * static_cast<int>(dims.size()), n_classes, rng);
    }
    if (mode == TrainMode::late_fusion) {
      for (std::size_t i = 0; i < dims.size(); ++i)
        p.modality_heads.push_back(ClassifierParams::init(d_feat, n_classes, rng));
    }
    if (mode == TrainMode::ours) {
      p.cell = MemoryCellParams::init(d_feat, rng);
      if (use_gate) p.gate = GateParams::init(8, rng);
    }
    return p;
  }

  int n_modalities() const { return static_cast<int>(encoders.size()); }

  std::vector<ParamRef> param_refs() {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < encoders.size(); ++i) {
      const std::string p = "enc" + std::to_string(i);
      out.push_back({p + ".w1", &encoders[i].w1});
      out.push_back({p + ".b1", &encoders[i].b1});
      out.push_back({p + ".w2", &encoders[i].w2});
      out.push_back({p + ".b2", &encoders[i].b2});
    }
    out.push_back({"head.w", &head.w});
    out.push_back({"head.b", &head.b});
    if (concat_head) {
      out.push_back({"concat.w", &concat_head->w});
      out.push_back({"concat.b", &concat_head->b});
    }
    for (std::size_t i = 0; i < modality_heads.size(); ++i) {
      const std::string p = "uni" + std::to_string(i);
      out.push_back({p + ".w", &modality_heads[i].w});
      out.push_back({p + ".b", &modality_heads[i].b});
    }
    if (cell) {
      out.push_back({"cell.wf", &cell->wf});
      out.push_back({"cell.wi", &cell->wi});
      out.push_back({"cell.wo", &cell->wo});
      out.push_back({"cell.wg", &cell->wg});
    }
    if (gate) {
      out.push_back({"gate.w1", &gate->w1});
      out.push_back({"gate.b1", &gate->b1});
      out.push_back({"gate.w2", &gate->w2});
      out.push_back({"gate.b2", &gate->b2});
    }
    return out;
  }

  static std::vector<std::string> encoder_names(int i) {
    const std::string p = "enc" + std::to_string(i);
    return {p + ".w1", p + ".b1", p + ".w2", p + ".b2"};
  }
  static std::vector<std::string> head_names() { return {"head.w", "head.b"}; }
  static std::vector<std::string> cell_names() {
    return {"cell.wf", "cell.wi", "cell.wo", "cell.wg"};
  }
  static std::vector<std::string> gate_names() {
    return {"gate.w1", "gate.b1", "gate.w2", "gate.b2"};
  }
};

// ---------------------------------------------------------------------------
// Tape builders
// ---------------------------------------------------------------------------

namespace tape_ops {

inline autograd::NodeId encode(autograd::Tape& t, const EncoderParams& p,
                               const Tensor& input, const std::string& pname) {
  namespace ag = autograd;
  if (input.rows() != p.w1.cols()) {
    throw DimensionError("encode: input " + input.shape_str() +
                         " does not match encoder width " + p.w1.shape_str());
  }
  const ag::NodeId x = t.constant(input);
  const ag::NodeId w1 = t.param(pname + ".w1", p.w1);
  const ag::NodeId b1 = t.param(pname + ".b1", p.b1);
  const ag::NodeId w2 = t.param(pname + ".w2", p.w2);
  const ag::NodeId b2 = t.param(pname + ".b2", p.b2);
  const ag::NodeId h = ag::relu(t, ag::add_col(t, ag::matmul(t, w1, x), b1));
  return ag::relu(t, ag::add_col(t, ag::matmul(t, w2, h), b2));
}

inline autograd::NodeId classify(autograd::Tape& t, const ClassifierParams& p,
                                 autograd::NodeId features,
                                 const std::string& pname) {
  namespace ag = autograd;
  const ag::NodeId w = t.param(pname + ".w", p.w);
  const ag::NodeId b = t.param(pname + ".b", p.b);
  return ag::add_col(t, ag::matmul(t, w, features), b);
}

/// Mean cross entropy of class-major logits (K x m) against labels.
inline autograd::NodeId classification_loss(autograd::Tape& t,
                                            autograd::NodeId logits_km,
                                            const std::vector<int>& labels) {
  return autograd::softmax_cross_entropy(t, autograd::transpose(t, logits_km),
                                         labels);
}

/// Joint baseline loss: cross entropy of the concat head over all encoded
/// modalities. Gradients flow to every encoder and the concat classifier.
inline autograd::NodeId joint_loss(autograd::Tape& t, const ModelParams& model,
                                   const std::vector<Tensor>& batch_inputs,
                                   const std::vector<int>& labels) {
  namespace ag = autograd;
  if (!model.concat_head) {
    throw ConfigError("joint_loss: model has no concat head (mode is not joint)");
  }
  ag::NodeId fused = encode(t, model.encoders[0], batch_inputs[0], "enc0");
  for (std::size_t i = 1; i < model.encoders.size(); ++i) {
    fused = ag::concat_rows(
        t, fused,
        encode(t, model.encoders[i], batch_inputs[i], "enc" + std::to_string(i)));
  }
  return classification_loss(t, classify(t, *model.concat_head, fused, "concat"),
                             labels);
}

}  // namespace tape_ops

/// Average of per-modality softmax distributions; argmax ties break toward
/// the lower class index.
inline std::vector<int> late_fusion_predict(const ModelParams& model,
                                            const std::vector<Tensor>& batch_inputs) {
  if (model.modality_heads.size() != model.encoders.size()) {
    throw ConfigError("late_fusion_predict: model has no per-modality heads");
  }
  Tensor avg;
  for (std::size_t i = 0; i < model.encoders.size(); ++i) {
    const Tensor probs = softmax_cols(
        classify(model.modality_heads[i], encode(model.encoders[i], batch_inputs[i])));
    avg = i == 0 ? probs : add(avg, probs);
  }
  return argmax_cols(scale(avg, 1.0 / static_cast<double>(model.encoders.size())));
}

// ---------------------------------------------------------------------------
// Checkpoints: manifest.json + params.bin, mirroring the dataset layout.
// ---------------------------------------------------------------------------

struct Checkpoint {
  ModelParams model;
  std::vector<int> priority;
  Tensor carry;
  double tau = 0.1;
  double memory_decay = 0.9;
  std::vector<int> dims;
};

inline void save_checkpoint(Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["mode"] = train_mode_name(ckpt.model.mode);
  manifest["d_feat"] = ckpt.model.d_feat;
  manifest["hidden"] = ckpt.model.hidden;
  manifest["n_classes"] = ckpt.model.n_classes;
  manifest["dims"] = ckpt.dims;
  manifest["gate"] = ckpt.model.gate.has_value();
  manifest["priority"] = ckpt.priority;
  manifest["tau"] = ckpt.tau;
  manifest["memory_decay"] = ckpt.memory_decay;
  manifest["carry"] = std::vector<double>(ckpt.carry.data(),
                                          ckpt.carry.data() + ckpt.carry.size());

  std::vector<double> blob;
  nlohmann::json params = nlohmann::json::array();
  for (const ParamRef& p : ckpt.model.param_refs()) {
    params.push_back({{"name", p.name},
                      {"shape", p.tensor->shape()},
                      {"offset", blob.size()}});
    blob.insert(blob.end(), p.tensor->data(), p.tensor->data() + p.tensor->size());
  }
  manifest["params"] = std::move(params);

  std::ofstream mf(dir / "manifest.json");
  mf << manifest.dump(2) << "\n";
  mf.close();
  detail::write_blob(dir / "params.bin", blob.data(), blob.size() * sizeof(double));
}

inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "ours") return TrainMode::ours;
  if (s == "joint") return TrainMode::joint;
  if (s == "alt-plain") return TrainMode::alt_plain;
  if (s == "late-fusion") return TrainMode::late_fusion;
  throw ConfigError("unknown training mode: " + s);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw FormatError("missing checkpoint manifest in " + dir.string());
    try {
      manifest = nlohmann::json::parse(mf);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("malformed checkpoint manifest: " + std::string(e.what()));
    }
  }
  Checkpoint ckpt;
  try {
    ckpt.dims = manifest.at("dims").get<std::vector<int>>();
    ckpt.model = ModelParams::init(
        ckpt.dims, manifest.at("hidden").get<int>(),
        manifest.at("d_feat").get<int>(), manifest.at("n_classes").get<int>(),
        parse_train_mode(manifest.at("mode").get<std::string>()),
        manifest.at("gate").get<bool>(), 0);
    ckpt.priority = manifest.at("priority").get<std::vector<int>>();
    ckpt.tau = manifest.at("tau").get<double>();
    ckpt.memory_decay = manifest.at("memory_decay").get<double>();
    const auto carry = manifest.at("carry").get<std::vector<double>>();
    ckpt.carry = Tensor({static_cast<int>(carry.size()), 1}, carry);

    const auto blob = detail::read_blob(dir / "params.bin");
    const double* data = reinterpret_cast<const double*>(blob.data());
    const std::size_t n_doubles = blob.size() / sizeof(double);
    for (const auto& pj : manifest.at("params")) {
      const std::string name = pj.at("name").get<std::string>();
      const auto shape = pj.at("shape").get<std::vector<int>>();
      const std::size_t offset = pj.at("offset").get<std::size_t>();
      Tensor* dst = nullptr;
      for (ParamRef& ref : ckpt.model.param_refs()) {
        if (ref.name == name) {
          // param_refs returns pointers into ckpt.model, stable across calls
          dst = ref.tensor;
          break;
        }
      }
      if (!dst) throw FormatError("checkpoint names unknown parameter: " + name);
      std::size_t count = 1;
      for (int d : shape) count *= static_cast<std::size_t>(d);
      if (offset + count > n_doubles) {
        throw FormatError("checkpoint blob too short for parameter: " + name);
      }
      *dst = Tensor(shape, std::vector<double>(data + offset, data + offset + count));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint manifest field error: " + std::string(e.what()));
  }
  return ckpt;
}

}  // namespace modeq
