/**
 * @file   arch.hpp
 * @brief  Architecture configuration shared by all four subnetworks.
 */
#pragma once

#include <bit>
#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tensor.hpp"

namespace gwai {

struct ArchConfig {
    std::size_t sr_factor = 8;
    std::size_t base_width = 64;
    std::size_t upscale_width = 256;
    std::size_t n_srnet_blocks = 16;
    std::size_t n_gfenet_blocks = 12;
    std::size_t fusion_interval = 4;
    std::size_t n_wnet_blocks = 8;
    /// Trunk width of the warper. Its three bare 2x shuffles divide the
    /// channel count by 4 each, so it must be a multiple of 4^log2(sr).
    std::size_t wnet_width = 64;
    std::vector<std::size_t> critic_widths{64, 128, 256, 512};
    /// VGG-16 stage widths (2,2,3,3,3 convolutions per stage).
    std::vector<std::size_t> inet_widths{64, 128, 256, 512, 512};
    std::size_t inet_embed_dim = 4096;
    double res_scale = 1.0;
    std::size_t hr_size = 256;
    /// False for the guide-free ablation (SRnet + critic only).
    bool use_guide = true;

    std::size_t lr_size() const { return hr_size / sr_factor; }
    std::size_t scale_steps() const { return static_cast<std::size_t>(std::countr_zero(sr_factor)); }
    std::size_t n_fusions() const { return n_gfenet_blocks / fusion_interval; }

    /// SRnet block index (1-based) after which fusion k (0-based) is applied.
    std::size_t fusion_tap(std::size_t k) const { return (k + 1) * fusion_interval; }

    void validate() const {
        auto fail = [](const std::string& m) { throw ValidationError("ArchConfig: " + m); };
        if (sr_factor < 2 || !std::has_single_bit(sr_factor)) fail("sr_factor must be a power of 2 >= 2");
        if (base_width == 0 || upscale_width == 0 || wnet_width == 0 || inet_embed_dim == 0) fail("widths must be > 0");
        if (upscale_width % 4 != 0) fail("upscale_width must be divisible by 4 (2x pixel shuffle)");
        if (fusion_interval == 0) fail("fusion_interval must be > 0");
        if (n_gfenet_blocks % fusion_interval != 0) fail("n_gfenet_blocks must be divisible by fusion_interval");
        if (use_guide && n_fusions() * fusion_interval > n_srnet_blocks)
            fail("more fusions than SRnet blocks can host at this interval");
        std::size_t shrink = 1;
        for (std::size_t i = 0; i < scale_steps(); ++i) shrink *= 4;
        if (wnet_width % shrink != 0)
            fail("wnet_width must be divisible by 4^log2(sr_factor) = " + std::to_string(shrink));
        if (hr_size % sr_factor != 0) fail("hr_size must be divisible by sr_factor");
        if (critic_widths.empty()) fail("critic needs at least one layer");
        if (inet_widths.size() != 5) fail("inet_widths needs the 5 VGG stages");
        if (hr_size % 32 != 0) fail("hr_size must be divisible by 32 (five 2x2 pools in Inet)");
        if (!(res_scale >= 0)) fail("res_scale must be >= 0");
    }

    /// Full-size layout.
    static ArchConfig paper() { return {}; }

    /// Topology-preserving shrink for CPU runs.
    static ArchConfig desk() {
        ArchConfig a;
        a.hr_size = 64;
        a.base_width = 16;
        a.upscale_width = 64;
        a.n_srnet_blocks = 8;
        a.n_gfenet_blocks = 6;
        a.fusion_interval = 2;
        a.n_wnet_blocks = 4;
        a.wnet_width = 64;
        a.critic_widths = {16, 32, 64, 128};
        a.inet_widths = {16, 32, 64, 128, 128};
        a.inet_embed_dim = 128;
        return a;
    }

    /// Smallest configuration exercising every code path; for gradient checks.
    static ArchConfig nano() {
        ArchConfig a;
        a.sr_factor = 2;
        a.hr_size = 32;
        a.base_width = 3;
        a.upscale_width = 8;
        a.n_srnet_blocks = 2;
        a.n_gfenet_blocks = 2;
        a.fusion_interval = 1;
        a.n_wnet_blocks = 1;
        a.wnet_width = 4;
        a.critic_widths = {2, 2, 2, 2};
        a.inet_widths = {2, 2, 2, 2, 2};
        a.inet_embed_dim = 4;
        return a;
    }

    static ArchConfig preset(const std::string& name) {
        if (name == "paper") return paper();
        if (name == "desk") return desk();
        if (name == "nano") return nano();
        throw ValidationError("unknown architecture preset '" + name + "' (expected paper, desk or nano)");
    }

    bool operator==(const ArchConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ArchConfig& a) {
    j = nlohmann::json{{"sr_factor", a.sr_factor},
                       {"base_width", a.base_width},
                       {"upscale_width", a.upscale_width},
                       {"n_srnet_blocks", a.n_srnet_blocks},
                       {"n_gfenet_blocks", a.n_gfenet_blocks},
                       {"fusion_interval", a.fusion_interval},
                       {"n_wnet_blocks", a.n_wnet_blocks},
                       {"wnet_width", a.wnet_width},
                       {"critic_widths", a.critic_widths},
                       {"inet_widths", a.inet_widths},
                       {"inet_embed_dim", a.inet_embed_dim},
                       {"res_scale", a.res_scale},
                       {"hr_size", a.hr_size},
                       {"use_guide", a.use_guide}};
}

/// Missing keys keep the value of `base`, so a config can name a preset
/// and override a few fields.
inline ArchConfig arch_from_json(const nlohmann::json& j, ArchConfig a = {}) {
    if (j.contains("preset")) a = ArchConfig::preset(j.at("preset").get<std::string>());
    auto take = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    take("sr_factor", a.sr_factor);
    take("base_width", a.base_width);
    take("upscale_width", a.upscale_width);
    take("n_srnet_blocks", a.n_srnet_blocks);
    take("n_gfenet_blocks", a.n_gfenet_blocks);
    take("fusion_interval", a.fusion_interval);
    take("n_wnet_blocks", a.n_wnet_blocks);
    take("wnet_width", a.wnet_width);
    take("critic_widths", a.critic_widths);
    take("inet_widths", a.inet_widths);
    take("inet_embed_dim", a.inet_embed_dim);
    take("res_scale", a.res_scale);
    take("hr_size", a.hr_size);
    take("use_guide", a.use_guide);
    a.validate();
    return a;
}

inline void from_json(const nlohmann::json& j, ArchConfig& a) { a = arch_from_json(j); }

}  // namespace gwai
