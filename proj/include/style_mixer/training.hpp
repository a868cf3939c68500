#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "style_mixer/config.hpp"
#include "style_mixer/losses.hpp"
#include "style_mixer/model.hpp"

namespace style_mixer {

struct TrainConfig {
    std::filesystem::path content_dir;
    std::filesystem::path style_dir;
    std::filesystem::path output_dir = "runs/style_mixer";
    /// Encoder weights file, or "random:<seed>" for the He-initialized
    /// stand-in. Empty means default_encoder_path().
    std::string encoder;
    /// Checkpoint to continue from; empty starts fresh.
    std::filesystem::path resume;

    int64_t batch_size = 6;
    double lr = 1e-4;
    int64_t resize_short = 512;
    int64_t crop = 256;
    int64_t max_steps = 160000;
    uint64_t seed = 0;
    int64_t checkpoint_every = 1000;

    ModelConfig model;

    /// Throws Error on violated invariants (batch_size >= 1, crop <= resize_short, ...).
    void validate() const;
};

/// Reads TrainConfig fields from a flat key-value config. Keys match the
/// field names (`content_dir`, `batch_size`, ...) plus `pa.patch_size`,
/// `pa.norm_eps`, `mff.layers`, `mff.se_ratio`.
TrainConfig train_config_from(const KeyValueConfig& kv);

/// Loss weights from the same file: `lambda_c`, `lambda_s`, `lambda_cx`,
/// `lambda_id1`, `lambda_id2`, `cx_bandwidth`, `loss_eps`.
LossConfig loss_config_from(const KeyValueConfig& kv);

/// Resolves TrainConfig::encoder to a loaded encoder.
VggEncoder resolve_encoder(const std::string& spec);

/// PNG/JPEG files directly inside `dir`, sorted by name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

struct Batch {
    torch::Tensor content;  ///< N x 3 x crop x crop
    torch::Tensor style;
};

/// Samples content and style images independently and uniformly, resizes the
/// shorter side to cfg.resize_short and takes a random crop x crop window.
/// Undecodable files and images with a side under 32 px are skipped with a
/// warning on stderr.
Batch prepare_batch(const std::vector<std::filesystem::path>& content_paths,
                    const std::vector<std::filesystem::path>& style_paths, const TrainConfig& cfg,
                    std::mt19937_64& rng);

/// Everything needed to continue training bit-for-bit.
struct TrainState {
    int64_t step = 0;
    StyleMixer model{nullptr};
    std::unique_ptr<torch::optim::Adam> optimizer;
    std::mt19937_64 rng;
};

/// Fresh state: model parameters drawn from `seed`, amplifier k = 1, Adam
/// with default moments. The encoder is excluded from the optimizer.
TrainState make_train_state(const ModelConfig& model_cfg, VggEncoder encoder, double lr, uint64_t seed);

/// One optimization step. Stylization losses use the additive merge; the
/// identity terms reconstruct content and style through the amplifier path.
/// A non-finite term throws NonFiniteLoss before any parameter changes.
LossBreakdown train_step(TrainState& state, const Batch& batch, const LossConfig& loss_cfg);

void save_train_state(const std::filesystem::path& path, TrainState& state);
TrainState load_train_state(const std::filesystem::path& path, VggEncoder encoder, double lr);

/// Called after every step with (step, losses).
using StepCallback = std::function<void(int64_t, const LossBreakdown&)>;

/// Full run: writes checkpoint_<step>.smx at the start (fresh runs), every
/// checkpoint_every steps and at the end, and appends to loss.csv in
/// output_dir. Returns the last checkpoint written.
std::filesystem::path train(const TrainConfig& cfg, const LossConfig& loss_cfg, const StepCallback& on_step = {});

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int64_t step);

}  // namespace style_mixer
