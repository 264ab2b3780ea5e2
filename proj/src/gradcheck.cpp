// SPDX-License-Identifier: Apache-2.0

#include "eclip/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "eclip/autodiff.hpp"
#include "eclip/decoder.hpp"
#include "eclip/errors.hpp"
#include "eclip/objectives.hpp"

namespace eclip {

bool GradcheckReport::passed(double tol) const {
  return std::all_of(components.begin(), components.end(), [tol](const ComponentResult& c) { return c.worst <= tol; });
}

namespace {

Tensor random_leaf(Rng& rng, Shape shape, double stddev = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor::from(std::move(shape), std::move(v), true);
}

void make_trainable(std::vector<Tensor>& out, Tensor& t, double rescale) {
  t = t.clone_leaf(true);
  if (rescale != 1.0 && t.rank() == 2) {
    for (auto& v : t.mutable_data()) v *= rescale;
  }
  out.push_back(t);
}

}  // namespace

double gradient_error(const std::function<Tensor()>& f, const std::vector<Tensor>& params, Rng& rng,
                      const GradcheckOptions& opt) {
  const auto analytic = value_and_grad(f, params);
  NoGradGuard ng;
  std::vector<std::vector<double>> a(params.size()), n(params.size());
  double total = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor p = params[k];
    const auto& g = analytic.grads[k];
    for (double v : g) total += v * v;
    const std::vector<double> saved(p.data().begin(), p.data().end());
    for (std::size_t r = 0; r < opt.directions; ++r) {
      std::vector<double> dir(saved.size());
      double norm = 0.0;
      for (auto& x : dir) {
        x = rng.normal();
        norm += x * x;
      }
      norm = std::sqrt(norm);
      double ga = 0.0;
      for (std::size_t i = 0; i < dir.size(); ++i) {
        dir[i] /= norm;
        ga += g[i] * dir[i];
      }
      auto w = p.mutable_data();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = saved[i] + opt.eps * dir[i];
      const double up = f().item();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = saved[i] - opt.eps * dir[i];
      const double down = f().item();
      std::copy(saved.begin(), saved.end(), w.begin());
      a[k].push_back(ga * (1.0 + opt.fault));
      n[k].push_back((up - down) / (2.0 * opt.eps));
    }
  }
  // A tensor whose gradient is negligible next to the whole function's (an
  // attention key bias, say, whose exact gradient is 0) is judged on that
  // overall scale instead of on finite-difference rounding noise.
  const double floor = 1e-6 * std::max(1.0, std::sqrt(total));
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) worst = std::max(worst, relative_error(a[k], n[k], floor));
  return worst;
}

ComponentResult check_component(const std::string& name, const GradcheckOptions& opt) {
  const auto cfg = opt.model;
  const auto d = cfg.embed_dim();
  const auto b = opt.batch;
  const auto t = cfg.decoder.num_queries;
  const auto n = cfg.image.max_grid_h * cfg.image.max_grid_w;
  ComponentResult res{name, 0.0, 0};
  std::uint64_t tag = 0;
  for (char c : name) tag = tag * 131 + static_cast<unsigned char>(c);
  const auto seeds = name == "encoder" ? opt.encoder_seeds : opt.seeds;

  for (std::size_t s = 0; s < seeds; ++s) {
    Rng rng = Rng::derive(opt.seed, {0x67726164ULL, tag, s});
    Tensor log_tau = Tensor::scalar(std::log(0.05 + 0.5 * rng.uniform()), true);
    std::function<Tensor()> f;
    std::vector<Tensor> params;

    if (name == "itc") {
      auto img = random_leaf(rng, {b, d});
      auto txt = random_leaf(rng, {b, d});
      params = {img, txt, log_tau};
      f = [=] { return itc_loss(normalize(img), normalize(txt), exp(neg(log_tau))); };
    } else if (name == "inter") {
      auto hb = random_leaf(rng, {b, d});
      auto hm = random_leaf(rng, {b, d});
      auto q = random_leaf(rng, {opt.queue, d});
      params = {hb, hm, q, log_tau};
      f = [=] { return inter_product_loss(normalize(hb), normalize(hm), normalize(q), exp(neg(log_tau))); };
    } else if (name == "itm") {
      Rng init = Rng::derive(opt.seed, {0x68656164ULL, s});
      auto head = MatchHead::create(init, d);
      head.weight = random_leaf(rng, {d, 2}, 1.0);
      head.bias = random_leaf(rng, {2}, 0.5);
      auto inst = random_leaf(rng, {2 * b, d});
      auto txt = random_leaf(rng, {2 * b, d});
      std::vector<MatchLabel> labels;
      for (std::size_t k = 0; k < 2 * b; ++k) labels.push_back(k % 2 ? MatchLabel::no_match : MatchLabel::match);
      params = {inst, txt, head.weight, head.bias};
      f = [=] { return itm_loss(normalize(inst), normalize(txt), labels, head); };
    } else if (name == "intra") {
      auto h = random_leaf(rng, {t, d});
      auto txt = random_leaf(rng, {d});
      const auto r = rng.below(t);
      params = {h, txt, log_tau};
      f = [=] { return intra_product_loss(normalize(h), normalize(txt), r, exp(neg(log_tau))); };
    } else if (name == "reg" || name == "decoder") {
      Rng init = Rng::derive(opt.seed, {0x646563ULL, s});
      auto dec = DecoderParams::create(init, cfg.decoder);
      dec.visit("decoder", [&](const std::string&, Tensor& p) { make_trainable(params, p, 10.0); });
      auto z = random_leaf(rng, {n, d}, 0.5);
      auto prompts = random_leaf(rng, {t, d}, 0.5);
      params.push_back(z);
      params.push_back(prompts);
      const auto r = rng.below(t);
      auto readout = random_leaf(rng, {t, d}).detach();
      const auto dcfg = cfg.decoder;
      auto run = [=] {
        std::vector<Prompt> ps;
        for (std::size_t k = 0; k < t; ++k) ps.push_back({eclip::row(prompts, k), k % 2 ? Modality::image : Modality::text, k == r});
        return decode(z, build_queries(ps, dec), dec, dcfg);
      };
      if (name == "reg") {
        f = [=] { return entropy_reg(run().assignment, r); };
      } else {
        f = [=] { return sum(mul(run().instances, readout)); };
      }
    } else if (name == "encoder") {
      Rng init = Rng::derive(opt.seed, {0x656e63ULL, s});
      auto ip = ImageEncoderParams::create(init, cfg.image);
      auto tp = TextEncoderParams::create(init, cfg.text);
      ip.visit("image", [&](const std::string&, Tensor& p) { make_trainable(params, p, 5.0); });
      tp.visit("text", [&](const std::string&, Tensor& p) { make_trainable(params, p, 5.0); });
      ImageSample img;
      img.grid_h = cfg.image.max_grid_h;
      img.grid_w = cfg.image.max_grid_w;
      img.patch_features = random_leaf(rng, {n, cfg.image.input_dim}).detach();
      TextSample txt;
      txt.vocab_size = cfg.text.vocab_size;
      for (std::size_t k = 0; k < 6; ++k) txt.token_ids.push_back(static_cast<std::uint32_t>(1 + rng.below(cfg.text.vocab_size - 1)));
      auto c_img = random_leaf(rng, {d}).detach();
      auto c_txt = random_leaf(rng, {d}).detach();
      auto c_tok = random_leaf(rng, {n, d}).detach();
      const auto icfg = cfg.image;
      const auto tcfg = cfg.text;
      f = [=] {
        const auto ei = encode_image(img, ip, icfg);
        const auto et = encode_text(txt, tp, tcfg);
        return add(add(sum(mul(ei.projected_cls, c_img)), sum(mul(et.projected_cls, c_txt))),
                   sum(mul(ei.projected_tokens, c_tok)));
      };
    } else {
      throw InputError("unknown gradcheck component '" + name + "'");
    }
    res.worst = std::max(res.worst, gradient_error(f, params, rng, opt));
    ++res.checks;
  }
  return res;
}

GradcheckReport run_gradcheck(const GradcheckOptions& opt) {
  GradcheckReport r;
  for (const char* name : kGradcheckComponents) r.components.push_back(check_component(name, opt));
  return r;
}

}  // namespace eclip
