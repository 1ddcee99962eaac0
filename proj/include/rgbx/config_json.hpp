#pragma once

#include <string>

#include <json.hpp>

#include "rgbx/augment.hpp"
#include "rgbx/losses.hpp"
#include "rgbx/net.hpp"
#include "rgbx/optim.hpp"

namespace rgbx {

using nlohmann::json;

inline std::string to_string(Standardizer v) {
    switch (v) {
        case Standardizer::MeanDev: return "g2s";
        case Standardizer::ZScore: return "zs";
        default: return "ms";
    }
}
inline Standardizer standardizer_from_string(const std::string& s) {
    if (s == "g2s" || s == "mean-dev") return Standardizer::MeanDev;
    if (s == "zs" || s == "zscore") return Standardizer::ZScore;
    if (s == "ms" || s == "median") return Standardizer::MedianDev;
    throw std::invalid_argument("unknown standardizer: " + s);
}

inline std::string to_string(GradOperator v) {
    return v == GradOperator::Sobel ? "sobel" : "diff";
}
inline GradOperator grad_operator_from_string(const std::string& s) {
    if (s == "sobel") return GradOperator::Sobel;
    if (s == "diff") return GradOperator::ForwardDiff;
    throw std::invalid_argument("unknown gradient operator: " + s);
}

inline std::string to_string(BlockKind v) {
    return v == BlockKind::ReZero ? "rezero" : "bn";
}
inline BlockKind block_kind_from_string(const std::string& s) {
    if (s == "rezero") return BlockKind::ReZero;
    if (s == "bn") return BlockKind::BatchNorm;
    throw std::invalid_argument("unknown block kind: " + s);
}

inline json to_json(const LossConfig& c) {
    return {{"lambda", c.lambda},
            {"epsilon", c.epsilon},
            {"standardizer", to_string(c.standardizer)},
            {"grad_operator", to_string(c.grad_op)},
            {"scales", c.scales}};
}
inline LossConfig loss_config_from_json(const json& j) {
    LossConfig c;
    c.lambda = j.value("lambda", c.lambda);
    c.epsilon = j.value("epsilon", c.epsilon);
    if (j.contains("standardizer")) c.standardizer = standardizer_from_string(j["standardizer"]);
    if (j.contains("grad_operator")) c.grad_op = grad_operator_from_string(j["grad_operator"]);
    c.scales = j.value("scales", c.scales);
    return c;
}

inline json to_json(const NetConfig& c) {
    return {{"levels", c.levels},
            {"base_channels", c.base_channels},
            {"blocks_per_level", c.blocks_per_level},
            {"block_kind", to_string(c.block_kind)},
            {"in_channels", c.in_channels},
            {"out_channels", c.out_channels}};
}
inline NetConfig net_config_from_json(const json& j) {
    NetConfig c;
    c.levels = j.value("levels", c.levels);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.blocks_per_level = j.value("blocks_per_level", c.blocks_per_level);
    if (j.contains("block_kind")) c.block_kind = block_kind_from_string(j["block_kind"]);
    c.in_channels = j.value("in_channels", c.in_channels);
    c.out_channels = j.value("out_channels", c.out_channels);
    return c;
}

inline json to_json(const AugmentConfig& c) {
    return {{"gaussian_std_min", c.gaussian_std_min},
            {"gaussian_std_max", c.gaussian_std_max},
            {"saltpepper_prob_min", c.saltpepper_prob_min},
            {"saltpepper_prob_max", c.saltpepper_prob_max},
            {"zoom_factors", c.zoom_factors},
            {"sparsity_min", c.sparsity_min},
            {"sparsity_max", c.sparsity_max},
            {"hole_count_min", c.hole_count_min},
            {"hole_count_max", c.hole_count_max},
            {"flip_prob", c.flip_prob},
            {"stage_gate_prob", c.stage_gate_prob},
            {"rate_zero_prob", c.rate_zero_prob},
            {"rate_one_prob", c.rate_one_prob},
            {"target_height", c.target_height},
            {"depth_scale", c.depth_scale},
            {"sparsity_log_uniform", c.sparsity_log_uniform},
            {"rate_log_floor", c.rate_log_floor}};
}
inline AugmentConfig augment_config_from_json(const json& j) {
    AugmentConfig c;
    c.gaussian_std_min = j.value("gaussian_std_min", c.gaussian_std_min);
    c.gaussian_std_max = j.value("gaussian_std_max", c.gaussian_std_max);
    c.saltpepper_prob_min = j.value("saltpepper_prob_min", c.saltpepper_prob_min);
    c.saltpepper_prob_max = j.value("saltpepper_prob_max", c.saltpepper_prob_max);
    if (j.contains("zoom_factors")) c.zoom_factors = j["zoom_factors"].get<std::vector<int>>();
    c.sparsity_min = j.value("sparsity_min", c.sparsity_min);
    c.sparsity_max = j.value("sparsity_max", c.sparsity_max);
    c.hole_count_min = j.value("hole_count_min", c.hole_count_min);
    c.hole_count_max = j.value("hole_count_max", c.hole_count_max);
    c.flip_prob = j.value("flip_prob", c.flip_prob);
    c.stage_gate_prob = j.value("stage_gate_prob", c.stage_gate_prob);
    c.rate_zero_prob = j.value("rate_zero_prob", c.rate_zero_prob);
    c.rate_one_prob = j.value("rate_one_prob", c.rate_one_prob);
    c.target_height = j.value("target_height", c.target_height);
    c.depth_scale = j.value("depth_scale", c.depth_scale);
    c.sparsity_log_uniform = j.value("sparsity_log_uniform", c.sparsity_log_uniform);
    c.rate_log_floor = j.value("rate_log_floor", c.rate_log_floor);
    return c;
}

inline json to_json(const AdamWConfig& c) {
    return {{"lr", c.lr},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"eps", c.eps},
            {"weight_decay", c.weight_decay}};
}
inline AdamWConfig adamw_config_from_json(const json& j) {
    AdamWConfig c;
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    return c;
}

} // namespace rgbx
