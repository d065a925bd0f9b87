// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#include "core/model.hpp"

#include <cmath>
#include <string>

namespace kpflow {

void Model::define_blocks(std::vector<ParamBlock> blocks) {
  std::size_t off = 0;
  for (auto& b : blocks) {
    b.offset = off;
    off += b.size();
  }
  blocks_ = std::move(blocks);
  theta_ = Vec::Zero(Eigen::Index(off));
}

void Model::set_params(const Vec& theta) {
  require(theta.size() == theta_.size(), ErrorCode::kDimension,
          "set_params: expected " + std::to_string(theta_.size()) + " parameters, got " +
              std::to_string(theta.size()));
  theta_ = theta;
}

const ParamBlock& Model::block(const std::string& name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return b;
  fail(ErrorCode::kInvalidArgument, "unknown parameter block '" + name + "' for model " + kind_name());
}

Eigen::Map<const Mat> Model::block_map(const ParamBlock& blk, const Vec& v) {
  return Eigen::Map<const Mat>(v.data() + blk.offset, Eigen::Index(blk.rows), Eigen::Index(blk.cols));
}

Eigen::Map<Mat> Model::block_map(const ParamBlock& blk, Vec& v) {
  return Eigen::Map<Mat>(v.data() + blk.offset, Eigen::Index(blk.rows), Eigen::Index(blk.cols));
}

Eigen::Map<Mat> Model::block_map(const std::string& name) { return block_map(block(name), theta_); }

Eigen::Map<const Mat> Model::block_map(const std::string& name) const {
  return block_map(block(name), theta_);
}

ForwardTrace Model::run(const Traj3& inputs, const Vec& z0, const Traj3* pert, double scale) const {
  require(inputs.H() == input_dim(), ErrorCode::kDimension,
          "forward: inputs have " + std::to_string(inputs.H()) + " channels, model expects " +
              std::to_string(input_dim()));
  require(std::size_t(z0.size()) == state_dim(), ErrorCode::kDimension, "forward: z0 has wrong length");
  const std::size_t B = inputs.B(), T = inputs.T();
  if (pert) {
    require(pert->B() == B && pert->T() == T && pert->H() == state_dim(), ErrorCode::kDimension,
            "forward: perturbation shape mismatch");
  }
  ForwardTrace tr;
  tr.model = std::shared_ptr<const Model>(clone());
  tr.inputs = inputs;
  tr.z = Traj3(B, T, state_dim(), inputs.dt());
  for (std::size_t b = 0; b < B; ++b) tr.z.at(b, 0) = z0;
  init_cache(tr);
  for (std::size_t t = 0; t + 1 < T; ++t) {
    advance(tr, t);
    if (pert) tr.z.step(t + 1) += scale * pert->step(t);
    for (std::size_t b = 0; b < B; ++b) {
      if (!tr.z.at(b, t + 1).allFinite())
        fail(ErrorCode::kDivergence, "forward: non-finite state at trial " + std::to_string(b) + ", time " +
                                         std::to_string(t + 1));
    }
  }
  return tr;
}

ForwardTrace Model::forward(const Traj3& inputs, const Vec& z0) const { return run(inputs, z0, nullptr, 0.0); }

Traj3 Model::forward_perturbed(const Traj3& inputs, const Vec& z0, const Traj3& pert, double scale) const {
  return run(inputs, z0, &pert, scale).z;
}

namespace {

void check_slot(const ForwardTrace& tr, std::size_t b, std::size_t t, std::size_t vlen) {
  require(b < tr.B(), ErrorCode::kInvalidArgument, "Jacobian action: trial index out of range");
  require(t + 1 < tr.T(), ErrorCode::kInvalidArgument, "Jacobian action: time index must satisfy t < T-1");
  require(vlen == tr.S(), ErrorCode::kDimension, "Jacobian action: vector length mismatch");
}

}  // namespace

Vec jac_z_apply(const ForwardTrace& tr, std::size_t b, std::size_t t, const Vec& v) {
  check_slot(tr, b, t, std::size_t(v.size()));
  Vec out(v.size());
  const Eigen::Index S = v.size();
  tr.model->jac_block(tr, t, b, ConstStepMap(v.data(), 1, S, Eigen::OuterStride<>(S)),
                      StepMap(out.data(), 1, S, Eigen::OuterStride<>(S)));
  return out;
}

Vec jac_z_tapply(const ForwardTrace& tr, std::size_t b, std::size_t t, const Vec& v) {
  check_slot(tr, b, t, std::size_t(v.size()));
  Vec out(v.size());
  const Eigen::Index S = v.size();
  tr.model->jac_block_t(tr, t, b, ConstStepMap(v.data(), 1, S, Eigen::OuterStride<>(S)),
                        StepMap(out.data(), 1, S, Eigen::OuterStride<>(S)));
  return out;
}

Vec param_vjp(const ForwardTrace& tr, const Traj3& q) {
  require(q.shape() == tr.z.shape(), ErrorCode::kDimension, "param_vjp: q must be shaped like the trace states");
  return tr.model->param_vjp(tr, q);
}

Traj3 param_jvp(const ForwardTrace& tr, const Vec& dtheta) {
  require(std::size_t(dtheta.size()) == tr.model->num_params(), ErrorCode::kDimension,
          "param_jvp: parameter vector length mismatch");
  return tr.model->param_jvp(tr, dtheta);
}

Traj3 readout(const Traj3& z, const Mat& W_out, const Vec& b_out) {
  require(std::size_t(W_out.cols()) == z.H(), ErrorCode::kDimension, "readout: W_out columns must equal H");
  require(b_out.size() == W_out.rows(), ErrorCode::kDimension, "readout: b_out length must equal W_out rows");
  Traj3 y(z.B(), z.T(), std::size_t(W_out.rows()), z.dt());
  for (std::size_t t = 0; t < z.T(); ++t) {
    y.step(t).noalias() = z.step(t) * W_out.transpose();
    y.step(t).rowwise() += b_out.transpose();
  }
  return y;
}

nlohmann::json params_sidecar(const Model& m) {
  nlohmann::json j;
  j["model"] = m.hyper_json();
  j["num_params"] = m.num_params();
  j["layout"] = "row-major blocks, concatenated in the listed order";
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : m.blocks())
    blocks.push_back({{"name", b.name}, {"offset", b.offset}, {"shape", {b.rows, b.cols}}});
  j["blocks"] = blocks;
  return j;
}

std::unique_ptr<Model> model_from_json(const nlohmann::json& hyper) {
  const std::string kind = hyper.at("kind").get<std::string>();
  if (kind == "rnn") {
    RnnConfig c;
    c.hidden = hyper.at("H").get<std::size_t>();
    c.inputs = hyper.at("I").get<std::size_t>();
    c.alpha = hyper.value("alpha", 1.0);
    const std::string act = hyper.value("activation", std::string("tanh"));
    require(act == "tanh" || act == "relu", ErrorCode::kConfig, "unknown activation '" + act + "'");
    c.activation = act == "relu" ? Activation::kRelu : Activation::kTanh;
    return std::make_unique<RnnModel>(c);
  }
  if (kind == "gru") {
    GruConfig c;
    c.hidden = hyper.at("H").get<std::size_t>();
    c.inputs = hyper.at("I").get<std::size_t>();
    return std::make_unique<GruModel>(c);
  }
  if (kind == "hh") {
    HhConfig c;
    c.neurons = hyper.at("H").get<std::size_t>();
    c.inputs = hyper.at("I").get<std::size_t>();
    c.g_K = hyper.value("g_K", c.g_K);
    c.g_Na = hyper.value("g_Na", c.g_Na);
    c.g_l = hyper.value("g_l", c.g_l);
    c.V_K = hyper.value("V_K", c.V_K);
    c.V_Na = hyper.value("V_Na", c.V_Na);
    c.V_l = hyper.value("V_l", c.V_l);
    c.V_t = hyper.value("V_t", c.V_t);
    c.K_p = hyper.value("K_p", c.K_p);
    c.I_app = hyper.value("I_app", c.I_app);
    c.dt = hyper.value("dt_hh", c.dt);
    return std::make_unique<HhModel>(c);
  }
  fail(ErrorCode::kConfig, "unknown model kind '" + kind + "'");
}

}  // namespace kpflow
