#pragma once

// Untrained deep-decoder prior: blocks of (1x1 conv -> ReLU -> x2 bilinear
// upsample), a final 1x1 projection to one channel and a sigmoid. Gradients are
// propagated by hand through the same primitives.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "holopr/grid.hpp"
#include "holopr/imaging.hpp"
#include "holopr/random.hpp"

namespace holopr::decoder {

/// Channel-major activation tensor (C x H x W).
struct Tensor3 {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> data;

    Tensor3() = default;
    Tensor3(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
        : channels(c), height(h), width(w), data(c * h * w, fill) {}

    std::size_t plane() const noexcept { return height * width; }
    double& at(std::size_t c, std::size_t r, std::size_t col) noexcept { return data[(c * height + r) * width + col]; }
    double at(std::size_t c, std::size_t r, std::size_t col) const noexcept {
        return data[(c * height + r) * width + col];
    }
    std::span<double> channel(std::size_t c) noexcept { return {data.data() + c * plane(), plane()}; }
    std::span<const double> channel(std::size_t c) const noexcept { return {data.data() + c * plane(), plane()}; }
    bool same_shape(const Tensor3& o) const noexcept {
        return channels == o.channels && height == o.height && width == o.width;
    }
};

struct DecoderConfig {
    std::size_t depth = 2;
    std::vector<std::size_t> channels;  // c_1 .. c_{depth+1}
    std::size_t latent_height = 1;
    std::size_t latent_width = 1;

    Shape output_shape() const { return {latent_height << depth, latent_width << depth}; }

    void validate() const {
        if (depth < 1) throw Error("decoder: depth must be >= 1");
        if (channels.size() != depth + 1)
            throw Error("decoder: expected " + std::to_string(depth + 1) + " channel counts, got " +
                        std::to_string(channels.size()));
        for (auto c : channels)
            if (c < 1) throw Error("decoder: channel counts must be >= 1");
        if (latent_height < 1 || latent_width < 1) throw Error("decoder: latent shape must be >= 1x1");
    }

    /// Uniform channel count with the latent sized so the output is `out` x `out`.
    static DecoderConfig for_output(std::size_t out, std::size_t depth, std::size_t channels) {
        if (depth < 1 || depth >= 32 || out % (std::size_t{1} << depth) != 0)
            throw Error("decoder: output size " + std::to_string(out) + " is not divisible by 2^" +
                        std::to_string(depth));
        DecoderConfig cfg{depth, std::vector<std::size_t>(depth + 1, channels), out >> depth, out >> depth};
        cfg.validate();
        return cfg;
    }
};

/// All trainable weights in one flat buffer: kernels theta_1..theta_d
/// (row-major c_{i+1} x c_i) followed by the head (1 x c_{d+1}).
class DecoderParams {
public:
    DecoderParams() = default;
    explicit DecoderParams(DecoderConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        std::size_t offset = 0;
        for (std::size_t i = 0; i < cfg_.depth; ++i) {
            offsets_.push_back(offset);
            offset += cfg_.channels[i + 1] * cfg_.channels[i];
        }
        offsets_.push_back(offset);
        offset += cfg_.channels.back();
        values_.assign(offset, 0.0);
    }

    const DecoderConfig& config() const noexcept { return cfg_; }
    std::size_t layer_count() const noexcept { return cfg_.depth; }

    std::span<double> kernel(std::size_t layer) { return {values_.data() + offsets_[layer], kernel_size(layer)}; }
    std::span<const double> kernel(std::size_t layer) const {
        return {values_.data() + offsets_[layer], kernel_size(layer)};
    }
    std::span<double> head() { return {values_.data() + offsets_.back(), cfg_.channels.back()}; }
    std::span<const double> head() const { return {values_.data() + offsets_.back(), cfg_.channels.back()}; }

    std::size_t kernel_offset(std::size_t layer) const { return offsets_[layer]; }
    std::size_t head_offset() const { return offsets_.back(); }

    std::vector<double>& values() noexcept { return values_; }
    const std::vector<double>& values() const noexcept { return values_; }

private:
    std::size_t kernel_size(std::size_t layer) const { return cfg_.channels[layer + 1] * cfg_.channels[layer]; }

    DecoderConfig cfg_;
    std::vector<std::size_t> offsets_;
    std::vector<double> values_;
};

/// Fixed random network input z (c_1 x kappa x lambda).
class LatentInput {
public:
    explicit LatentInput(Tensor3 z) : z_(std::move(z)) {}
    const Tensor3& tensor() const noexcept { return z_; }

private:
    Tensor3 z_;
};

/// z ~ U[0, 0.1]; each 1x1 kernel (and the head) ~ U[-1/sqrt(c_in), 1/sqrt(c_in)].
/// Draw order: z, then kernels layer by layer, then the head.
inline std::pair<DecoderParams, LatentInput> init_decoder(const DecoderConfig& cfg, std::uint64_t seed) {
    DecoderParams params(cfg);
    Rng rng(seed);
    Tensor3 z(cfg.channels[0], cfg.latent_height, cfg.latent_width);
    for (auto& v : z.data) v = 0.1 * rng.uniform();
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.channels[i]));
        for (auto& v : params.kernel(i)) v = rng.uniform(-bound, bound);
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.channels.back()));
    for (auto& v : params.head()) v = rng.uniform(-bound, bound);
    return {std::move(params), LatentInput(std::move(z))};
}

/// out[o] = sum_i kernel[o][i] * in[i], pixelwise; no bias.
inline Tensor3 conv1x1_forward(const Tensor3& input, std::span<const double> kernel, std::size_t c_out) {
    if (c_out == 0 || kernel.size() != c_out * input.channels)
        throw Error("conv1x1_forward: kernel shape does not match channel counts");
    Tensor3 out(c_out, input.height, input.width);
    const std::size_t n = input.plane();
    for (std::size_t o = 0; o < c_out; ++o) {
        double* dst = out.data.data() + o * n;
        for (std::size_t i = 0; i < input.channels; ++i) {
            const double k = kernel[o * input.channels + i];
            const double* src = input.data.data() + i * n;
            for (std::size_t p = 0; p < n; ++p) dst[p] += k * src[p];
        }
    }
    return out;
}

/// Transposed 1x1 convolution: grad_in[i] = sum_o kernel[o][i] * grad_out[o].
inline Tensor3 conv1x1_backward_input(const Tensor3& grad_out, std::span<const double> kernel, std::size_t c_in) {
    if (kernel.size() != grad_out.channels * c_in) throw Error("conv1x1_backward_input: kernel shape mismatch");
    Tensor3 out(c_in, grad_out.height, grad_out.width);
    const std::size_t n = grad_out.plane();
    for (std::size_t o = 0; o < grad_out.channels; ++o) {
        const double* src = grad_out.data.data() + o * n;
        for (std::size_t i = 0; i < c_in; ++i) {
            const double k = kernel[o * c_in + i];
            double* dst = out.data.data() + i * n;
            for (std::size_t p = 0; p < n; ++p) dst[p] += k * src[p];
        }
    }
    return out;
}

/// Kernel gradient: grad[o][i] = sum_p grad_out[o][p] * input[i][p].
inline void conv1x1_backward_kernel(const Tensor3& grad_out, const Tensor3& input, std::span<double> grad_kernel) {
    if (grad_kernel.size() != grad_out.channels * input.channels || input.plane() != grad_out.plane())
        throw Error("conv1x1_backward_kernel: shape mismatch");
    const std::size_t n = input.plane();
    for (std::size_t o = 0; o < grad_out.channels; ++o) {
        const double* g = grad_out.data.data() + o * n;
        for (std::size_t i = 0; i < input.channels; ++i) {
            const double* x = input.data.data() + i * n;
            double acc = 0.0;
            for (std::size_t p = 0; p < n; ++p) acc += g[p] * x[p];
            grad_kernel[o * input.channels + i] += acc;
        }
    }
}

/// x2 bilinear upsampling with the imaging module's half-pixel-centre alignment.
inline Tensor3 upsample2_forward(const Tensor3& input) {
    const auto rows = imaging::bilinear_taps(input.height, 2 * input.height);
    const auto cols = imaging::bilinear_taps(input.width, 2 * input.width);
    Tensor3 out(input.channels, 2 * input.height, 2 * input.width);
    for (std::size_t ch = 0; ch < input.channels; ++ch)
        for (std::size_t r = 0; r < out.height; ++r) {
            const auto& tr = rows[r];
            for (std::size_t c = 0; c < out.width; ++c) {
                const auto& tc = cols[c];
                const double top = (1.0 - tc.w1) * input.at(ch, tr.i0, tc.i0) + tc.w1 * input.at(ch, tr.i0, tc.i1);
                const double bot = (1.0 - tc.w1) * input.at(ch, tr.i1, tc.i0) + tc.w1 * input.at(ch, tr.i1, tc.i1);
                out.at(ch, r, c) = (1.0 - tr.w1) * top + tr.w1 * bot;
            }
        }
    return out;
}

/// Exact transpose of upsample2_forward (scatters each output weight back).
inline Tensor3 upsample2_adjoint(const Tensor3& grad) {
    if (grad.height % 2 != 0 || grad.width % 2 != 0) throw Error("upsample2_adjoint: odd gradient shape");
    const std::size_t h = grad.height / 2, w = grad.width / 2;
    const auto rows = imaging::bilinear_taps(h, grad.height);
    const auto cols = imaging::bilinear_taps(w, grad.width);
    Tensor3 out(grad.channels, h, w);
    for (std::size_t ch = 0; ch < grad.channels; ++ch)
        for (std::size_t r = 0; r < grad.height; ++r) {
            const auto& tr = rows[r];
            for (std::size_t c = 0; c < grad.width; ++c) {
                const auto& tc = cols[c];
                const double g = grad.at(ch, r, c);
                const double gt = (1.0 - tr.w1) * g, gb = tr.w1 * g;
                out.at(ch, tr.i0, tc.i0) += (1.0 - tc.w1) * gt;
                out.at(ch, tr.i0, tc.i1) += tc.w1 * gt;
                out.at(ch, tr.i1, tc.i0) += (1.0 - tc.w1) * gb;
                out.at(ch, tr.i1, tc.i1) += tc.w1 * gb;
            }
        }
    return out;
}

inline Tensor3 relu(Tensor3 t) {
    for (auto& v : t.data) v = v > 0.0 ? v : 0.0;
    return t;
}

inline double sigmoid(double v) {
    return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

/// Activations kept from a forward pass for the backward pass.
struct ForwardCache {
    std::vector<Tensor3> layer_inputs;  // input to conv i
    std::vector<Tensor3> pre_relu;      // conv i output
    Tensor3 features;                   // final c_{d+1} x H x W map fed to the head
    GrayImage output;                   // sigmoid(head . features)
};

/// x = sigmoid(head . block_d(...block_1(z))), block_i = up2 . relu . conv_i.
inline std::pair<GrayImage, ForwardCache> decoder_forward(const DecoderParams& params, const LatentInput& z) {
    const auto& cfg = params.config();
    const Tensor3& input = z.tensor();
    if (input.channels != cfg.channels[0] || input.height != cfg.latent_height || input.width != cfg.latent_width)
        throw Error("decoder_forward: latent shape does not match the configuration");
    ForwardCache cache;
    Tensor3 act = input;
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        Tensor3 pre = conv1x1_forward(act, params.kernel(i), cfg.channels[i + 1]);
        cache.layer_inputs.push_back(std::move(act));
        act = upsample2_forward(relu(pre));
        cache.pre_relu.push_back(std::move(pre));
    }
    const Tensor3 logits = conv1x1_forward(act, params.head(), 1);
    GrayImage x(act.height, act.width);
    for (std::size_t p = 0; p < x.size(); ++p) x[p] = sigmoid(logits.data[p]);
    cache.features = std::move(act);
    cache.output = x;
    return {std::move(x), std::move(cache)};
}

/// Reverse-mode gradients of a scalar objective with respect to every
/// parameter, laid out like DecoderParams::values(). `upstream` is d objective / d x.
inline std::vector<double> decoder_backward(const DecoderParams& params, const LatentInput& z,
                                            const ForwardCache& cache, const GrayImage& upstream) {
    const auto& cfg = params.config();
    const Shape out_shape = cfg.output_shape();
    if (cache.pre_relu.size() != cfg.depth || cache.layer_inputs.size() != cfg.depth ||
        shape_of(cache.output) != out_shape || cache.features.channels != cfg.channels.back() ||
        z.tensor().channels != cfg.channels[0])
        throw Error("decoder_backward: cache does not match the parameters (stale cache)");
    require_same_shape(upstream, cache.output, "decoder_backward");
    std::vector<double> grads(params.values().size(), 0.0);

    Tensor3 dlogit(1, out_shape.height, out_shape.width);
    for (std::size_t p = 0; p < upstream.size(); ++p) {
        const double s = cache.output[p];
        dlogit.data[p] = upstream[p] * s * (1.0 - s);
    }
    conv1x1_backward_kernel(dlogit, cache.features,
                            std::span<double>(grads.data() + params.head_offset(), cfg.channels.back()));
    Tensor3 dact = conv1x1_backward_input(dlogit, params.head(), cfg.channels.back());

    for (std::size_t i = cfg.depth; i-- > 0;) {
        Tensor3 dpre = upsample2_adjoint(dact);
        const Tensor3& pre = cache.pre_relu[i];
        if (!dpre.same_shape(pre)) throw Error("decoder_backward: cache does not match the parameters (stale cache)");
        for (std::size_t k = 0; k < dpre.data.size(); ++k)
            if (!(pre.data[k] > 0.0)) dpre.data[k] = 0.0;
        const std::size_t ksize = cfg.channels[i + 1] * cfg.channels[i];
        conv1x1_backward_kernel(dpre, cache.layer_inputs[i],
                                std::span<double>(grads.data() + params.kernel_offset(i), ksize));
        if (i > 0) dact = conv1x1_backward_input(dpre, params.kernel(i), cfg.channels[i]);
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Checkpoints: <stem>.json manifest + <stem>.bin raw little-endian float64
// (parameters in DecoderParams order, then z).

namespace detail {

inline void write_f64(std::ofstream& out, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(bytes), 8);
}

inline double read_f64(const unsigned char* bytes) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t(bytes[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

}  // namespace detail

inline void save_checkpoint(const DecoderParams& params, const LatentInput& z, const std::filesystem::path& stem) {
    const auto& cfg = params.config();
    auto bin = stem;
    bin += ".bin";
    {
        std::ofstream out(bin, std::ios::binary);
        if (!out) throw Error("cannot open '" + bin.string() + "' for writing");
        for (double v : params.values()) detail::write_f64(out, v);
        for (double v : z.tensor().data) detail::write_f64(out, v);
        if (!out) throw Error("failed writing '" + bin.string() + "'");
    }
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t i = 0; i < cfg.depth; ++i)
        layers.push_back({{"name", "kernel" + std::to_string(i + 1)},
                          {"shape", {cfg.channels[i + 1], cfg.channels[i], 1, 1}},
                          {"offset", params.kernel_offset(i)}});
    layers.push_back({{"name", "head"}, {"shape", {1, cfg.channels.back(), 1, 1}}, {"offset", params.head_offset()}});
    const nlohmann::json manifest = {
        {"format", "float64-le"},
        {"depth", cfg.depth},
        {"channels", cfg.channels},
        {"latent", {cfg.latent_height, cfg.latent_width}},
        {"parameters", layers},
        {"parameter_count", params.values().size()},
        {"latent_offset", params.values().size()},
        {"data", bin.filename().string()},
    };
    auto json_path = stem;
    json_path += ".json";
    imaging::write_text(json_path, manifest.dump(2) + "\n");
}

inline std::pair<DecoderParams, LatentInput> load_checkpoint(const std::filesystem::path& json_path) {
    try {
        const auto manifest = nlohmann::json::parse(imaging::detail::read_bytes(json_path));
        DecoderConfig cfg;
        cfg.depth = manifest.at("depth").get<std::size_t>();
        cfg.channels = manifest.at("channels").get<std::vector<std::size_t>>();
        cfg.latent_height = manifest.at("latent").at(0).get<std::size_t>();
        cfg.latent_width = manifest.at("latent").at(1).get<std::size_t>();
        DecoderParams params(cfg);
        Tensor3 z(cfg.channels[0], cfg.latent_height, cfg.latent_width);
        const auto bytes =
            imaging::detail::read_bytes(json_path.parent_path() / manifest.at("data").get<std::string>());
        const std::size_t n = params.values().size(), nz = z.data.size();
        if (bytes.size() != 8 * (n + nz)) throw Error("checkpoint: data file size does not match the manifest");
        for (std::size_t i = 0; i < n; ++i) params.values()[i] = detail::read_f64(bytes.data() + 8 * i);
        for (std::size_t i = 0; i < nz; ++i) z.data[i] = detail::read_f64(bytes.data() + 8 * (n + i));
        return {std::move(params), LatentInput(std::move(z))};
    } catch (const nlohmann::json::exception& e) {
        throw Error("checkpoint manifest '" + json_path.string() + "': " + e.what());
    }
}

}  // namespace holopr::decoder
