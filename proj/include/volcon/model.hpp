#pragma once

#include <cstdint>
#include <string>

#include "volcon/common.hpp"
#include "volcon/tensor.hpp"

namespace volcon {

// The three training variants. Baseline pairs two augmentations of one slice,
// PerScan pairs two slices drawn from one in-scan window, DeepSet contrasts
// summed embeddings of K-slice sets.
enum class Variant { Baseline, PerScan, DeepSet };

// Head applied after the set-sum: identity, or a one-hidden-layer ReLU MLP.
enum class DsHeadKind { Identity, Mlp };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);
std::string ds_head_name(DsHeadKind k);
DsHeadKind ds_head_from_name(const std::string& name);

struct ModelConfig {
    Variant variant = Variant::Baseline;
    std::size_t in_channels = 1;
    std::size_t image_size = 224;    // D: model input is [N, C, D, D]
    std::size_t base_channels = 8;   // width of the first conv block
    std::size_t feature_dim = 64;    // encoder output h
    std::size_t proj_dim = 32;       // projection output z
    DsHeadKind ds_head = DsHeadKind::Identity;
    double temperature = 0.5;
};

// image_size must survive four halvings; everything else must be positive.
void validate_model_config(const ModelConfig& cfg);

struct ModelBundle {
    ModelConfig cfg;
    ParamStore params;
};

// Kaiming-uniform (fan-in) weights, zero biases. The encoder and projection
// head are drawn first in a fixed order, so two variants sharing a seed share
// those parameters; the set head (when Mlp) draws afterwards.
ModelBundle init_model(const ModelConfig& cfg, std::uint64_t seed);

// Encoder f: four conv3x3/ReLU/avg-pool blocks, global mean pool, affine.
// images: [N, C, D, D] -> [N, feature_dim].
Tensor encode_batch(const ModelBundle& m, const Tensor& images);

// Projection head g: affine -> ReLU -> affine. [N, feature_dim] -> [N, proj_dim].
Tensor project(const ModelBundle& m, const Tensor& h);

// Sum each group of k consecutive rows, then apply the set head.
// set_features: [N*k, feature_dim] -> [N, feature_dim].
Tensor deepset_aggregate(const ModelBundle& m, const Tensor& set_features, std::size_t k);

struct EmbeddingBatch {
    Tensor z1;  // [B, P], rows unit-norm
    Tensor z2;  // [B, P], partner views in matching row order
};

// Contrastive loss over the 2B embeddings: temperature-scaled cosine
// similarities, self-similarity excluded, each row's positive is its partner;
// returns the mean over all 2B anchors of -log softmax(positive).
Tensor nt_xent(const EmbeddingBatch& batch, double temperature);

// Loss for one batch of view pairs: z = normalize(g(f(x))), then nt_xent.
// Serves both the baseline and the per-scan window variant, which differ only
// in where x1/x2 come from. x1, x2: [B, C, D, D].
Tensor pair_contrastive_loss(const ModelBundle& m, const Tensor& x1, const Tensor& x2);

// Loss for set views: encode all K slices per set, sum-aggregate, project,
// normalize, nt_xent. x1, x2: [B*k, C, D, D] with each set's slices contiguous.
Tensor set_contrastive_loss(const ModelBundle& m, const Tensor& x1, const Tensor& x2,
                            std::size_t k);

}  // namespace volcon
