// SPDX-License-Identifier: Apache-2.0
#include "freqdyn/crnn/grad_suite.hpp"

#include <chrono>
#include <memory>
#include <stdexcept>

#include "freqdyn/common/rng.hpp"
#include "freqdyn/crnn/model.hpp"
#include "freqdyn/numerics/gradcheck.hpp"
#include "freqdyn/numerics/gru.hpp"
#include "freqdyn/numerics/ops.hpp"
#include "freqdyn/trainer/loss.hpp"

namespace freqdyn::crnn {
namespace {

using In = std::span<const Var>;
using Tp = Tape<double>;

Tensor<double> rand(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(std::move(s));
  for (auto& v : t.data()) v = d(rng);
  return t;
}

/// sum(out * R) for a fixed random R, so every output coordinate matters.
Var project(Tp& tape, Var out, std::uint64_t seed) {
  auto rng = substream(seed, "gradcheck.projection");
  const Var r = tape.constant(rand(tape.shape(out), rng));
  return ops::sum_all(tape, ops::mul(tape, out, r));
}

struct Built {
  GradFn fn;
  std::vector<Tensor<double>> ins;
  // same function with every parameter as an input; `fixed` indexes the
  // ones left out of `ins`
  GradFn full;
  std::vector<Tensor<double>> full_ins;
  std::vector<std::size_t> fixed;

  Built(std::pair<GradFn, std::vector<Tensor<double>>> p) : fn(std::move(p.first)), ins(std::move(p.second)) {}
  Built() = default;
};

struct Case {
  std::string name;
  // builds inputs and the closure for one seed
  std::function<Built(std::uint64_t)> make;
  std::size_t max_coords = 0;
};

Case unary(const std::string& name, Shape shape, std::function<Var(Tp&, Var)> op, double lo = -1,
           double hi = 1) {
  return {name, [=](std::uint64_t seed) {
            auto rng = substream(seed, name);
            GradFn fn = [op, seed](Tp& t, In v) { return project(t, op(t, v[0]), seed); };
            return std::make_pair(fn, std::vector<Tensor<double>>{rand(shape, rng, lo, hi)});
          }};
}

Case nary(const std::string& name, std::vector<Shape> shapes, std::function<Var(Tp&, In)> op) {
  return {name, [=](std::uint64_t seed) {
            auto rng = substream(seed, name);
            std::vector<Tensor<double>> ins;
            for (const auto& s : shapes) ins.push_back(rand(s, rng));
            GradFn fn = [op, seed](Tp& t, In v) { return project(t, op(t, v), seed); };
            return std::make_pair(fn, ins);
          }};
}

std::vector<Case> primitive_cases() {
  std::vector<Case> c;
  c.push_back(nary("conv2d", {{2, 2, 5, 5}, {3, 2, 3, 3}, {3}},
                   [](Tp& t, In v) { return ops::conv2d(t, v[0], v[1], v[2]); }));
  c.push_back(nary("conv2d_dilated", {{1, 2, 7, 6}, {2, 2, 3, 3}},
                   [](Tp& t, In v) {
                     return ops::conv2d(t, v[0], v[1], std::nullopt, {{2, 1}, true, {0, 0}});
                   }));
  c.push_back(unary("pool2d_max", {2, 2, 4, 6},
                    [](Tp& t, Var x) { return ops::pool2d(t, x, ops::PoolMode::max, {2, 3}); }));
  c.push_back(unary("pool2d_avg", {2, 2, 4, 6},
                    [](Tp& t, Var x) { return ops::pool2d(t, x, ops::PoolMode::avg, {2, 3}); }));
  c.push_back({"batch_norm_train", [](std::uint64_t seed) {
                 auto rng = substream(seed, "batch_norm_train");
                 GradFn fn = [seed](Tp& t, In v) {
                   ops::BatchNormState<double> st{Tensor<double>({3}), Tensor<double>({3}, 1.0)};
                   return project(t, ops::batch_norm(t, v[0], v[1], v[2], st, true), seed);
                 };
                 return std::make_pair(fn, std::vector<Tensor<double>>{
                                               rand({2, 3, 4, 3}, rng), rand({3}, rng, 0.5, 1.5),
                                               rand({3}, rng)});
               }});
  c.push_back({"batch_norm_eval", [](std::uint64_t seed) {
                 auto rng = substream(seed, "batch_norm_eval");
                 const auto mean = rand({3}, rng), var = rand({3}, rng, 0.5, 2.0);
                 GradFn fn = [seed, mean, var](Tp& t, In v) {
                   ops::BatchNormState<double> st{mean, var};
                   return project(t, ops::batch_norm(t, v[0], v[1], v[2], st, false), seed);
                 };
                 return std::make_pair(fn, std::vector<Tensor<double>>{
                                               rand({2, 3, 4, 3}, rng), rand({3}, rng), rand({3}, rng)});
               }});
  c.push_back(unary("relu", {3, 7}, [](Tp& t, Var x) { return ops::relu(t, x); }));
  c.push_back(unary("sigmoid", {3, 7}, [](Tp& t, Var x) { return ops::sigmoid(t, x); }, -4, 4));
  c.push_back(unary("tanh", {3, 7}, [](Tp& t, Var x) { return ops::tanh(t, x); }, -3, 3));
  c.push_back(unary("softmax", {2, 3, 4}, [](Tp& t, Var x) { return ops::softmax(t, x, 1); }, -3, 3));
  c.push_back(nary("add", {{3, 4}, {3, 4}}, [](Tp& t, In v) { return ops::add(t, v[0], v[1]); }));
  c.push_back(nary("sub", {{3, 4}, {3, 4}}, [](Tp& t, In v) { return ops::sub(t, v[0], v[1]); }));
  c.push_back(nary("mul", {{3, 4}, {3, 4}}, [](Tp& t, In v) { return ops::mul(t, v[0], v[1]); }));
  c.push_back(unary("scale", {3, 4}, [](Tp& t, Var x) { return ops::scale(t, x, -2.5); }));
  c.push_back(nary("mul_broadcast", {{2, 3, 4, 5}, {2, 1, 4, 1}},
                   [](Tp& t, In v) { return ops::mul_broadcast(t, v[0], v[1]); }));
  c.push_back(unary("sum_axis", {2, 3, 4}, [](Tp& t, Var x) { return ops::sum_axis(t, x, 1); }));
  c.push_back(unary("mean_axis", {2, 3, 4}, [](Tp& t, Var x) { return ops::mean_axis(t, x, 2); }));
  c.push_back(unary("sum_all", {2, 3}, [](Tp& t, Var x) { return ops::sum_all(t, x); }));
  c.push_back(unary("mean_all", {2, 3}, [](Tp& t, Var x) { return ops::mean_all(t, x); }));
  c.push_back(unary("reshape", {2, 3, 4}, [](Tp& t, Var x) { return ops::reshape(t, x, {6, 4}); }));
  c.push_back(unary("permute", {2, 3, 4, 5},
                    [](Tp& t, Var x) { return ops::permute(t, x, {0, 3, 1, 2}); }));
  c.push_back(nary("concat", {{2, 3, 4}, {2, 1, 4}}, [](Tp& t, In v) {
    const std::vector<Var> xs{v[0], v[1]};
    return ops::concat(t, std::span<const Var>(xs), 1);
  }));
  c.push_back(unary("slice", {2, 5, 3}, [](Tp& t, Var x) { return ops::slice(t, x, 1, 1, 4); }));
  c.push_back(nary("linear", {{2, 3, 4}, {5, 4}, {5}},
                   [](Tp& t, In v) { return ops::linear(t, v[0], v[1], v[2]); }));
  c.push_back(unary("dropout", {4, 6}, [](Tp& t, Var x) {
    std::mt19937_64 rng(7);  // same mask on every evaluation
    return ops::dropout(t, x, 0.3, true, rng);
  }));
  c.push_back(unary("time_diff", {2, 2, 3, 5}, [](Tp& t, Var x) { return ops::time_diff(t, x); }));
  c.push_back(nary("gru_bidirectional", {{2, 3, 3}, {6, 3}, {6, 2}, {6}, {6}, {6, 3}, {6, 2}, {6}, {6}},
                   [](Tp& t, In v) {
                     const std::vector<std::pair<ops::GruDirection, ops::GruDirection>> layers{
                         {{v[1], v[2], v[3], v[4]}, {v[5], v[6], v[7], v[8]}}};
                     return ops::bigru(t, v[0], layers);
                   }));
  c.push_back(nary("basis_mix", {{2, 3, 4, 5}, {2, 3, 4, 5}, {2, 2, 4, 1}}, [](Tp& t, In v) {
    const std::vector<Var> ys{v[0], v[1]};
    return nn::basis_mix(t, std::span<const Var>(ys), v[2]);
  }));
  c.push_back({"bce_loss", [](std::uint64_t seed) {
                 auto rng = substream(seed, "bce_loss");
                 const auto target = rand({3, 4}, rng, 0, 1);
                 GradFn fn = [target](Tp& t, In v) { return trainer::bce_loss(t, v[0], target); };
                 return std::make_pair(fn, std::vector<Tensor<double>>{rand({3, 4}, rng, 0.05, 0.95)});
               }});
  c.push_back({"mse_loss", [](std::uint64_t seed) {
                 auto rng = substream(seed, "mse_loss");
                 const auto target = rand({3, 4}, rng);
                 GradFn fn = [target](Tp& t, In v) { return trainer::mse_loss(t, v[0], target); };
                 return std::make_pair(fn, std::vector<Tensor<double>>{rand({3, 4}, rng)});
               }});
  return c;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Parameters the loss is exactly invariant to: a per-channel bias under a
/// softmax over time, or a bias feeding train-mode batch norm. Their
/// differences are pure roundoff, so they are held fixed and their tape
/// gradient is required to vanish instead.
bool invariant_param(const std::string& name, bool followed_by_bn) {
  if (ends_with(name, ".conv1.bias") || ends_with(name, ".conv2.bias")) {
    return name.find(".tap.") != std::string::npos;
  }
  if (name == "head.attention.bias") return true;
  if (!followed_by_bn) return false;
  if (name == "pre.conv.bias") return true;
  return name.rfind("conv", 0) == 0 && name.find(".att.") == std::string::npos &&
         name.find(".gate.") == std::string::npos && name.find(".bias") != std::string::npos;
}

/// Splits a ParamStore into probed inputs and fixed values. `body` gets the
/// input and the full variable list.
template <class Body>
Built with_params(std::shared_ptr<ParamStore<double>> store, Tensor<double> x, bool followed_by_bn, Body body) {
  Built b;
  b.ins.push_back(x);
  b.full_ins.push_back(std::move(x));
  std::vector<bool> probe;
  for (const auto& p : store->params()) {
    const bool inv = invariant_param(p.name, followed_by_bn);
    probe.push_back(!inv);
    if (inv) {
      b.fixed.push_back(b.full_ins.size());
    } else {
      b.ins.push_back(p.value);
    }
    b.full_ins.push_back(p.value);
  }
  b.fn = [store, probe, body](Tp& t, In v) {
    std::vector<Var> vars;
    std::size_t k = 1;
    for (std::size_t i = 0; i < probe.size(); ++i) {
      vars.push_back(probe[i] ? v[k++] : t.constant(store->param(i).value));
    }
    return body(t, v[0], std::span<const Var>(vars));
  };
  b.full = [body](Tp& t, In v) { return body(t, v[0], v.subspan(1)); };
  return b;
}

/// Largest |tape gradient| over the inputs listed in `fixed`.
double fixed_grad_max(const Built& b) {
  if (b.fixed.empty()) return 0;
  Tape<double> tape;
  std::vector<Var> vars;
  for (const auto& t : b.full_ins) vars.push_back(tape.leaf(t, true));
  tape.backward(b.full(tape, vars));
  double m = 0;
  for (std::size_t i : b.fixed) {
    if (!tape.has_grad(vars[i])) continue;
    for (double g : tape.grad(vars[i]).data()) m = std::max(m, std::abs(g));
  }
  return m;
}

/// One conv layer of the given kind; every parameter that influences the
/// output is probed.
Case layer_case(const std::string& name, std::vector<nn::BranchSpec> branches, std::size_t cin,
                std::size_t cout, std::size_t F, std::size_t T) {
  return {name, [=](std::uint64_t seed) {
            auto rng = substream(seed, name);
            auto store = std::make_shared<ParamStore<double>>();
            auto init = substream(seed, name, 1);
            const auto layer = nn::ConvLayer::create(*store, name, 2, cin, cout, branches, init);
            // re-randomize so zero-initialized biases and unit gammas are generic
            // gammas stay away from 0 so no channel is dead after the ReLU
            for (auto& p : store->params()) {
              p.value = ends_with(p.name, ".gamma") ? rand(p.value.shape(), rng, 0.5, 1.5)
                                                     : rand(p.value.shape(), rng, -0.5, 0.5);
            }
            return with_params(store, rand({2, cin, F, T}, rng), false,
                               [store, layer, seed](Tp& t, Var x, std::span<const Var> vars) {
                                 nn::Context<double> ctx{t, vars, *store, true, nullptr, nullptr};
                                 return project(t, layer.forward(ctx, x), seed);
                               });
          }};
}

std::vector<Case> variant_cases() {
  using nn::BranchKind;
  using nn::BranchSpec;
  using nn::Fraction;
  const std::size_t cin = 4, cout = 8, F = 8, T = 6;
  auto dyn = [](Fraction f, std::vector<ops::FreqTime> d, nn::TimePooling pool = nn::TimePooling::avg) {
    BranchSpec s;
    s.kind = BranchKind::dynamic;
    s.fraction = f;
    s.dilations = std::move(d);
    s.attention.K = s.dilations.size();
    s.attention.pooling = pool;
    s.bias = true;
    return s;
  };
  auto stat = [](Fraction f) {
    BranchSpec s;
    s.kind = BranchKind::static_conv;
    s.fraction = f;
    return s;
  };
  const std::vector<ops::FreqTime> plain4{{1, 1}, {1, 1}, {1, 1}, {1, 1}};
  std::vector<Case> c;
  c.push_back(layer_case("plain", {stat({1, 1})}, cin, cout, F, T));
  c.push_back(layer_case("fdy", {dyn({1, 1}, plain4)}, cin, cout, F, T));
  c.push_back(layer_case("dfd", {dyn({1, 1}, {{1, 1}, {2, 1}, {3, 1}, {3, 1}})}, cin, cout, F, T));
  c.push_back(layer_case("pfd", {dyn({1, 4}, plain4), stat({3, 4})}, cin, cout, F, T));
  c.push_back(layer_case("mdfd",
                         {dyn({1, 8}, plain4), dyn({1, 8}, {{1, 1}, {1, 1}, {2, 1}, {3, 1}}),
                          dyn({1, 8}, {{1, 1}, {2, 1}, {2, 1}, {3, 1}}), stat({1, 1})},
                         cin, cout, F, T));
  c.push_back(layer_case("tfd", {dyn({1, 1}, plain4, nn::TimePooling::tap)}, cin, cout, F, T));
  // functional forms with an explicit pi
  c.push_back({"fdy_naive_vs_tape", [](std::uint64_t seed) {
                 auto rng = substream(seed, "fdy_naive_vs_tape");
                 std::vector<Tensor<double>> ins{rand({2, 3, 6, 5}, rng)};
                 for (int k = 0; k < 2; ++k) ins.push_back(rand({4, 3, 3, 3}, rng));
                 ins.push_back(rand({2, 2, 6, 1}, rng, 0, 1));
                 GradFn fn = [seed](Tp& t, In v) {
                   const std::vector<Var> ks{v[1], v[2]};
                   const std::vector<ops::FreqTime> d{{1, 1}, {1, 1}};
                   const Var pi = ops::softmax(t, v[3], 1);
                   return project(t, nn::dynamic_conv(t, v[0], std::span<const Var>(ks), {},
                                                      std::span<const ops::FreqTime>(d), pi),
                                  seed);
                 };
                 return std::make_pair(fn, ins);
               }});
  return c;
}

ModelConfig grad_model_config(const std::string& variant) {
  ModelConfig c = preset("toy-" + variant);
  c.n_mels = 64;
  c.channels = {8, 8, 8, 8};  // mdfd widths need multiples of 8
  c.pools = {{4, 2}, {4, 2}, {2, 1}, {2, 1}};
  c.gru_hidden = 4;
  c.gru_layers = 2;
  c.dropout = 0.0;
  c.pre_conv_channels = 4;
  return c;
}

Case model_case(const std::string& variant) {
  const std::string name = "crnn_" + variant;
  return {name,
          [=](std::uint64_t seed) {
            const ModelConfig cfg = grad_model_config(variant);
            auto model = std::make_shared<Model<double>>(Model<double>::build(cfg, seed));
            auto rng = substream(seed, name);
            for (auto& p : model->params().params()) {
              if (p.name.find(".bias") != std::string::npos || p.name.find(".beta") != std::string::npos) {
                p.value = rand(p.value.shape(), rng, -0.2, 0.2);
              }
            }
            // aliasing pointer: the store lives inside the model
            std::shared_ptr<ParamStore<double>> store(model, &model->params());
            return with_params(store, rand({2, 1, cfg.n_mels, 8}, rng, 0, 1), true,
                               [model, seed](Tp& t, Var x, std::span<const Var> vars) {
                                 nn::Context<double> ctx{t, vars, model->params(), true, nullptr, nullptr};
                                 const Outputs o = model->forward(ctx, x);
                                 return ops::add(t, project(t, o.strong, seed), project(t, o.weak, seed + 1));
                               });
          },
          6};
}

std::vector<Case> model_cases() {
  return {model_case("baseline"), model_case("fdy"), model_case("mdfd"), model_case("tfd")};
}

std::vector<Case> cases(GradScope s) {
  switch (s) {
    case GradScope::primitive: return primitive_cases();
    case GradScope::variant: return variant_cases();
    case GradScope::model: return model_cases();
  }
  return {};
}

}  // namespace

double default_tolerance(GradScope scope) { return scope == GradScope::model ? 1e-3 : 1e-4; }

GradScope parse_grad_scope(const std::string& s) {
  if (s == "primitive") return GradScope::primitive;
  if (s == "variant") return GradScope::variant;
  if (s == "model") return GradScope::model;
  throw std::invalid_argument("unknown gradcheck scope \"" + s + "\" (primitive, variant, model)");
}

std::vector<std::string> grad_case_names(GradScope scope) {
  std::vector<std::string> out;
  for (const auto& c : cases(scope)) out.push_back(c.name);
  return out;
}

std::vector<GradCaseResult> run_grad_suite(GradScope scope, const GradSuiteOptions& opt) {
  std::vector<GradCaseResult> out;
  for (const auto& c : cases(scope)) {
    for (std::uint64_t seed : opt.seeds) {
      const auto t0 = std::chrono::steady_clock::now();
      const Built b = c.make(seed);
      const auto r = grad_check(b.fn, b.ins, opt.eps, c.max_coords);
      GradCaseResult g;
      g.name = c.name;
      g.seed = seed;
      g.max_rel_error = r.max_rel_error;
      g.coords = r.coords;
      g.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      g.fixed_params = b.fixed.size();
      g.fixed_grad = fixed_grad_max(b);
      g.passed = r.max_rel_error < opt.tolerance && g.fixed_grad < opt.zero_tolerance;
      g.worst = r;
      if (opt.on_case) opt.on_case(g);
      out.push_back(g);
    }
  }
  return out;
}

}  // namespace freqdyn::crnn
