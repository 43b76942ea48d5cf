// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

// FSNet: gaze map + image -> saliency U-Net -> sampling grid -> warped
// 4-channel stack -> two-branch heads -> outer-product class mask.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fovealseg/error.hpp"
#include "fovealseg/gaze.hpp"
#include "fovealseg/heads.hpp"
#include "fovealseg/losses.hpp"
#include "fovealseg/nn.hpp"
#include "fovealseg/saliency_net.hpp"
#include "fovealseg/sampler.hpp"
#include "fovealseg/tensor.hpp"

namespace fovealseg {

struct FSNetConfig {
  int source_height = 32;
  int source_width = 32;
  int target_height = 16;
  int target_width = 16;
  int saliency_height = 0;  // 0: same as the target
  int saliency_width = 0;
  KernelSpec kernel{4};
  int num_classes = 3;
  int unet_base_channels = 16;
  int unet_depth = 3;
  int head_width = 16;
  double density_offset = 1e-6;

  int saliency_h() const noexcept { return saliency_height > 0 ? saliency_height : target_height; }
  int saliency_w() const noexcept { return saliency_width > 0 ? saliency_width : target_width; }

  UNetConfig unet() const { return {4, unet_base_channels, unet_depth}; }
  HeadsConfig heads() const { return {4, head_width, num_classes}; }

  void validate() const {
    auto dims = [](int h, int w) { return std::to_string(h) + "x" + std::to_string(w); };
    require(source_height >= 1 && source_width >= 1, ErrorKind::kConfiguration, "source dims must be positive");
    require(target_height >= 1 && target_width >= 1 && target_height <= source_height &&
                target_width <= source_width,
            ErrorKind::kConfiguration,
            "target " + dims(target_height, target_width) + " must fit in source " + dims(source_height, source_width));
    require(saliency_h() <= source_height && saliency_w() <= source_width, ErrorKind::kConfiguration,
            "saliency input " + dims(saliency_h(), saliency_w()) + " exceeds source");
    require(unet_depth >= 1 && unet_base_channels >= 1 && head_width >= 1, ErrorKind::kConfiguration,
            "network widths and depth must be positive");
    const int m = unet().size_multiple();
    require(saliency_h() % m == 0 && saliency_w() % m == 0, ErrorKind::kConfiguration,
            "saliency input " + dims(saliency_h(), saliency_w()) + " must be divisible by " + std::to_string(m));
    require(num_classes >= 1, ErrorKind::kConfiguration, "num_classes must be >= 1");
    require(density_offset > 0.0, ErrorKind::kConfiguration, "density offset must be > 0");
    require(kernel.sigma >= 1, ErrorKind::kConfiguration, "kernel sigma must be >= 1");
  }
};

enum class SamplerKind { kSaliency, kUniform };
enum class Mode { kInference, kTraining };

struct FSNetOutput {
  Tensor y_bm;                // 1 x h x w
  std::vector<double> y_cls;  // C, sums to 1
  Tensor y_cm;                // C x h x w
  SamplingGrid grid;
  SaliencyMap saliency;       // empty density for the uniform sampler
};

struct FullResPrediction {
  Mask mask;
  int label = 0;
};

inline Tensor compose_mask(const Tensor& y_bm, std::span<const double> y_cls) {
  require(y_bm.channels == 1, ErrorKind::kShape, "compose_mask: Y_bm must have one channel, got " + y_bm.shape_string());
  require(!y_cls.empty(), ErrorKind::kShape, "compose_mask: empty class vector");
  const int C = static_cast<int>(y_cls.size());
  Tensor out(C, y_bm.height, y_bm.width);
  for (int c = 0; c < C; ++c) {
    auto dst = out.plane(c);
    const auto src = y_bm.plane(0);
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = y_cls[static_cast<std::size_t>(c)] * src[k];
  }
  return out;
}

/// Index of the largest entry; ties resolve to the lowest index.
inline int argmax(std::span<const double> v) {
  require(!v.empty(), ErrorKind::kShape, "argmax of an empty vector");
  int best = 0;
  for (int c = 1; c < static_cast<int>(v.size()); ++c) {
    if (v[static_cast<std::size_t>(c)] > v[static_cast<std::size_t>(best)]) best = c;
  }
  return best;
}

inline FullResPrediction predict_fullres(const FSNetOutput& out) {
  return {threshold(unwarp(out.y_bm, out.grid), 0.5), argmax(out.y_cls)};
}

/// Grid whose nearest-mode samples land on the rows and columns read by a
/// bilinear warp through `grid`, used to supervise bilinear training passes.
inline SamplingGrid bilinear_aligned(const SamplingGrid& grid) {
  SamplingGrid g = grid;
  const double sh = static_cast<double>(grid.source_height - 1) / grid.source_height;
  const double sw = static_cast<double>(grid.source_width - 1) / grid.source_width;
  for (double& v : g.gh) v *= sh;
  for (double& v : g.gw) v *= sw;
  return g;
}

/// Drops the background channel of a (C+1)-channel one-hot volume.
inline Tensor class_channels(const Tensor& one_hot) {
  require(one_hot.channels >= 2, ErrorKind::kShape, "label volume needs a background channel and >= 1 class");
  Tensor out(one_hot.channels - 1, one_hot.height, one_hot.width);
  std::copy(one_hot.data.begin() + static_cast<std::ptrdiff_t>(one_hot.plane_size()), one_hot.data.end(),
            out.data.begin());
  return out;
}

inline constexpr int kCheckpointSchemaVersion = 1;

template <SegmentationHeads Heads = TwoBranchHeads>
class FSNetModel {
 public:
  struct SaliencyTrace {
    Tensor downsampled;
    UNet::Trace unet;
  };

  FSNetModel() = default;

  FSNetModel(const FSNetConfig& config, std::uint64_t seed)
    requires std::constructible_from<Heads, const HeadsConfig&, std::mt19937_64&>
      : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    saliency_ = UNet(config_.unet(), rng);
    heads_ = Heads(config_.heads(), rng);
  }

  FSNetModel(const FSNetConfig& config, std::uint64_t seed, Heads heads) : config_(config), heads_(std::move(heads)) {
    config_.validate();
    std::mt19937_64 rng(seed);
    saliency_ = UNet(config_.unet(), rng);
  }

  const FSNetConfig& config() const noexcept { return config_; }
  UNet& saliency_net() noexcept { return saliency_; }
  const UNet& saliency_net() const noexcept { return saliency_; }
  Heads& heads() noexcept { return heads_; }
  const Heads& heads() const noexcept { return heads_; }

  /// RGB + gaze map, 4 x H x W.
  Tensor input_stack(const Tensor& image, GazePoint gaze) const {
    require(image.channels == 3 && image.height == config_.source_height && image.width == config_.source_width,
            ErrorKind::kConfiguration,
            "image " + image.shape_string() + " does not match configured source 3x" +
                std::to_string(config_.source_height) + "x" + std::to_string(config_.source_width));
    require(gaze.valid(), ErrorKind::kValidation, "gaze outside [0,1]");
    return concat_channels(image, build_gaze_map(image.height, image.width, gaze).values);
  }

  SaliencyMap saliency(const Tensor& stack, SaliencyTrace* trace = nullptr) const {
    Tensor down = uniform_downsample(stack, config_.saliency_h(), config_.saliency_w());
    Tensor u = saliency_.forward(down, trace ? &trace->unet : nullptr);
    if (trace != nullptr) trace->downsampled = std::move(down);
    Tensor d = resize_bilinear(u, config_.source_height, config_.source_width);
    for (double& v : d.data) v += config_.density_offset;
    return {std::move(d)};
  }

  SamplingGrid grid(const SaliencyMap& s) const {
    return compute_grid(s, config_.target_height, config_.target_width, config_.kernel);
  }

  SamplingGrid uniform() const {
    return uniform_grid(config_.source_height, config_.source_width, config_.target_height, config_.target_width);
  }

  /// Heads applied to an already warped stack.
  FSNetOutput head_outputs(const Tensor& warped, typename Heads::Trace* trace = nullptr) const {
    HeadOutput h = heads_.forward(warped, trace);
    FSNetOutput out;
    out.y_bm = Tensor(1, warped.height, warped.width);
    for (std::size_t k = 0; k < out.y_bm.size(); ++k) out.y_bm.data[k] = nn::sigmoid(h.mask_logits.data[k]);
    out.y_cls = nn::softmax(h.class_logits);
    out.y_cm = compose_mask(out.y_bm, out.y_cls);
    return out;
  }

  FSNetOutput forward(const Tensor& image, GazePoint gaze, Mode mode = Mode::kInference,
                      SamplerKind sampler = SamplerKind::kSaliency) const {
    const Tensor stack = input_stack(image, gaze);
    SaliencyMap s;
    SamplingGrid g;
    if (sampler == SamplerKind::kSaliency) {
      s = saliency(stack);
      g = grid(s);
    } else {
      g = uniform();
    }
    FSNetOutput out = head_outputs(warp(stack, g, mode == Mode::kTraining ? WarpMode::kBilinear : WarpMode::kNearest));
    out.grid = std::move(g);
    out.saliency = std::move(s);
    return out;
  }

  /// Inference entry point used by the scheduler.
  FullResPrediction segment(const Tensor& image, GazePoint gaze) const {
    return predict_fullres(forward(image, gaze));
  }

  /// Loss of one sample through the bilinear saliency path; accumulates
  /// saliency-network gradients into `grads` with the heads held fixed.
  /// `labels` is the (C+1) x H x W one-hot ground truth.
  double saliency_gradient(const Tensor& stack, const Tensor& labels, const LossConfig& loss_cfg, UNet* grads,
                           LossStats* stats = nullptr) const {
    SaliencyTrace st;
    const SaliencyMap s = saliency(stack, &st);
    const SamplingGrid g = grid(s);
    const Tensor warped = warp(stack, g, WarpMode::kBilinear);
    typename Heads::Trace ht;
    const FSNetOutput out = head_outputs(warped, &ht);
    const Tensor target = class_channels(subsample_labels(labels, bilinear_aligned(g)));
    Tensor d_ycm;
    const double loss = total_loss(out.y_cm, target, loss_cfg, &d_ycm, stats);
    if (grads == nullptr) return loss;

    auto [d_mask_logits, d_cls_logits] = output_gradients(out, d_ycm);
    const Tensor d_warped = heads_.backward(ht, d_mask_logits, d_cls_logits, nullptr, true);
    std::vector<double> d_gh, d_gw;
    warp_bilinear_backward(stack, g, d_warped, d_gh, d_gw);
    Tensor d_density(1, config_.source_height, config_.source_width);
    compute_grid_backward(s, g, config_.kernel, d_gh, d_gw, d_density);
    const Tensor d_u = resize_bilinear_backward(d_density, config_.saliency_h(), config_.saliency_w());
    saliency_.backward(st.unet, d_u, grads);
    return loss;
  }

  /// Loss of one pre-warped sample; accumulates head gradients into `grads`.
  /// `target` is the C x h x w class volume in the warped space.
  double heads_gradient(const Tensor& warped, const Tensor& target, const LossConfig& loss_cfg, Heads* grads,
                        LossStats* stats = nullptr) const {
    typename Heads::Trace ht;
    const FSNetOutput out = head_outputs(warped, &ht);
    Tensor d_ycm;
    const double loss = total_loss(out.y_cm, target, loss_cfg, &d_ycm, stats);
    if (grads == nullptr) return loss;
    auto [d_mask_logits, d_cls_logits] = output_gradients(out, d_ycm);
    heads_.backward(ht, d_mask_logits, d_cls_logits, grads, false);
    return loss;
  }

  void visit_parameters(const nn::ParamVisitor& f) {
    saliency_.visit_parameters(f);
    heads_.visit_parameters([&](const std::string& name, std::vector<double>& v) { f("heads." + name, v); });
  }

  void save(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.txt");
    std::ofstream weights(dir / "weights.bin", std::ios::binary);
    require(manifest && weights, ErrorKind::kIo, "cannot write checkpoint to " + dir.string());
    manifest << "schema_version=" << kCheckpointSchemaVersion << '\n'
             << "source_height=" << config_.source_height << '\n'
             << "source_width=" << config_.source_width << '\n'
             << "target_height=" << config_.target_height << '\n'
             << "target_width=" << config_.target_width << '\n'
             << "saliency_height=" << config_.saliency_h() << '\n'
             << "saliency_width=" << config_.saliency_w() << '\n'
             << "kernel_sigma=" << config_.kernel.sigma << '\n'
             << "num_classes=" << config_.num_classes << '\n'
             << "unet_base_channels=" << config_.unet_base_channels << '\n'
             << "unet_depth=" << config_.unet_depth << '\n'
             << "head_width=" << config_.head_width << '\n';
    visit_parameters([&](const std::string& name, std::vector<double>& v) {
      manifest << "param." << name << '=' << v.size() << '\n';
      weights.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    });
    require(static_cast<bool>(weights) && static_cast<bool>(manifest), ErrorKind::kIo,
            "failed writing checkpoint " + dir.string());
  }

  /// Loads weights saved by save(); the manifest must describe this model.
  void load(const std::filesystem::path& dir) {
    const auto entries = read_manifest(dir / "manifest.txt");
    auto expect = [&](const std::string& key, long value) {
      const auto it = entries.find(key);
      require(it != entries.end(), ErrorKind::kValidation, "checkpoint manifest lacks " + key);
      require(it->second == std::to_string(value), ErrorKind::kValidation,
              "checkpoint " + key + "=" + it->second + " but model has " + std::to_string(value));
    };
    expect("schema_version", kCheckpointSchemaVersion);
    expect("source_height", config_.source_height);
    expect("source_width", config_.source_width);
    expect("target_height", config_.target_height);
    expect("target_width", config_.target_width);
    expect("kernel_sigma", config_.kernel.sigma);
    expect("num_classes", config_.num_classes);
    std::ifstream weights(dir / "weights.bin", std::ios::binary);
    require(static_cast<bool>(weights), ErrorKind::kIo, "cannot open " + (dir / "weights.bin").string());
    visit_parameters([&](const std::string& name, std::vector<double>& v) {
      expect("param." + name, static_cast<long>(v.size()));
      weights.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
      require(static_cast<bool>(weights), ErrorKind::kIo, "truncated weights for " + name);
    });
  }

  static std::map<std::string, std::string> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::kIo, "cannot open " + path.string());
    std::map<std::string, std::string> out;
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (line.empty() || eq == std::string::npos) continue;
      out[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return out;
  }

 private:
  /// Chain rule from d(loss)/d(Y_cm) to the mask and class logits.
  static std::pair<Tensor, std::vector<double>> output_gradients(const FSNetOutput& out, const Tensor& d_ycm) {
    const int C = static_cast<int>(out.y_cls.size());
    Tensor d_mask(1, out.y_bm.height, out.y_bm.width);
    std::vector<double> d_cls(static_cast<std::size_t>(C), 0.0);
    const auto bm = out.y_bm.plane(0);
    for (int c = 0; c < C; ++c) {
      const auto g = d_ycm.plane(c);
      const double p = out.y_cls[static_cast<std::size_t>(c)];
      double acc = 0.0;
      for (std::size_t k = 0; k < g.size(); ++k) {
        d_mask.data[k] += g[k] * p;
        acc += g[k] * bm[k];
      }
      d_cls[static_cast<std::size_t>(c)] = acc;
    }
    for (std::size_t k = 0; k < d_mask.size(); ++k) d_mask.data[k] *= bm[k] * (1.0 - bm[k]);
    return {std::move(d_mask), nn::softmax_backward(out.y_cls, d_cls)};
  }

  FSNetConfig config_;
  UNet saliency_;
  Heads heads_;
};

using FSNet = FSNetModel<TwoBranchHeads>;

}  // namespace fovealseg
