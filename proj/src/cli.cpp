// SPDX-License-Identifier: Apache-2.0

#include "eclip/cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "eclip/checkpoint.hpp"
#include "eclip/errors.hpp"
#include "eclip/eval.hpp"
#include "eclip/gradcheck.hpp"
#include "eclip/pretrain.hpp"
#include "eclip/synthdata.hpp"
#include "eclip/tensor_io.hpp"

namespace eclip::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(path + ": invalid JSON: " + e.what());
  }
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw InputError("write failed for " + path);
}

void echo(std::ostream& err, const std::string& command, const json& resolved) {
  err << "eclip " << command << " resolved config: " << resolved.dump() << '\n';
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::uint32_t> parse_token_ids(const std::string& s) {
  std::vector<std::uint32_t> ids;
  std::string cleaned = s;
  for (auto& c : cleaned) {
    if (c == ',') c = ' ';
  }
  std::istringstream in(cleaned);
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw InputError("--text expects token ids separated by spaces or commas, got '" + tok + "'");
    ids.push_back(static_cast<std::uint32_t>(v));
  }
  if (ids.empty()) throw InputError("--text is empty");
  return ids;
}

std::vector<std::size_t> parse_ks(const std::string& s) {
  std::vector<std::size_t> ks;
  std::string cleaned = s;
  for (auto& c : cleaned) {
    if (c == ',') c = ' ';
  }
  std::istringstream in(cleaned);
  std::size_t k = 0;
  while (in >> k) ks.push_back(k);
  if (ks.empty() || !in.eof()) throw InputError("--ks expects a comma separated list of positive integers");
  return ks;
}

// ---------------------------------------------------------------- gen-data

struct GenArgs {
  std::string out, config;
  std::size_t products = 200;
  std::optional<std::size_t> sources;
  std::uint64_t seed = 0;
  std::uint64_t first_id = 0;
  bool force = false;
};

int cmd_gen_data(const GenArgs& a, std::ostream& out, std::ostream& err) {
  GenConfig cfg;
  if (!a.config.empty()) from_json(read_json_file(a.config), cfg);
  if (a.sources) cfg.sources_per_product = *a.sources;
  cfg.validate();
  if (a.products == 0) throw InputError("--products must be positive");
  json resolved;
  to_json(resolved, cfg);
  echo(err, "gen-data", {{"out", a.out}, {"products", a.products}, {"seed", a.seed}, {"first_id", a.first_id}, {"generator", resolved}});

  std::error_code ec;
  if (fs::exists(a.out, ec)) {
    if (!fs::is_directory(a.out, ec)) throw InputError(a.out + " exists and is not a directory");
    if (!fs::is_empty(a.out, ec) && !a.force) throw InputError(a.out + " is not empty (use --force to overwrite)");
  }
  try {
    const auto records = generate_dataset(a.seed, a.products, cfg, a.out, a.first_id);
    out << "wrote " << records.size() << " products to " << (fs::path(a.out) / kManifestName).string() << '\n';
  } catch (const fs::filesystem_error& e) {
    throw InputError(std::string("cannot write dataset: ") + e.what());
  }
  return kExitOk;
}

// ---------------------------------------------------------------- pretrain

struct PretrainArgs {
  std::string data, config, stage = "all", out, resume, loss_csv, dump;
  std::size_t max_steps = 0;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> batch_size, stage1_epochs, stage2_epochs, num_queries;
  std::optional<double> lr_encoder, lr_rest;
  std::string weights;
};

void apply_overrides(TrainConfig& c, const PretrainArgs& a) {
  if (a.seed) c.seed = *a.seed;
  if (a.batch_size) c.batch_size = *a.batch_size;
  if (a.stage1_epochs) c.stage1_epochs = *a.stage1_epochs;
  if (a.stage2_epochs) c.stage2_epochs = *a.stage2_epochs;
  if (a.num_queries) c.num_queries = *a.num_queries;
  if (a.lr_encoder) c.lr_encoder = *a.lr_encoder;
  if (a.lr_rest) c.lr_rest = *a.lr_rest;
  if (!a.weights.empty()) {
    std::string s = a.weights;
    for (auto& ch : s) {
      if (ch == ',') ch = ' ';
    }
    std::istringstream in(s);
    std::array<double, 5> w{};
    for (auto& x : w) {
      if (!(in >> x)) throw InputError("--weights expects five numbers: itc,inter,itm,intra,reg");
    }
    c.weights = {w[0], w[1], w[2], w[3], w[4]};
  }
  c.validate();
}

int cmd_pretrain(const PretrainArgs& a, std::ostream& out, std::ostream& err) {
  int last_stage = 2;
  if (a.stage == "1") {
    last_stage = 1;
  } else if (a.stage != "2" && a.stage != "all") {
    throw InputError("--stage must be 1, 2 or all");
  }

  TrainState state;
  if (!a.resume.empty()) {
    state = load_checkpoint(a.resume);
    TrainConfig requested = state.config;
    if (!a.config.empty()) from_json(read_json_file(a.config), requested);
    apply_overrides(requested, a);
    json x, y;
    to_json(x, requested);
    to_json(y, state.config);
    if (x != y) throw InputError("resolved config differs from the checkpoint being resumed");
  } else {
    TrainConfig cfg;
    if (!a.config.empty()) from_json(read_json_file(a.config), cfg);
    apply_overrides(cfg, a);
    state = TrainState::fresh(cfg);
  }
  if (a.stage == "2" && state.progress.stage < 2) {
    throw InputError("--stage 2 needs a checkpoint that completed stage 1 (pass it with --resume)");
  }

  const Dataset ds = load_manifest(a.data);
  const auto& mc = state.config.model;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (auto tok : ds.record(i).text) {
      if (tok >= mc.text.vocab_size) throw InputError("dataset token id exceeds the model vocabulary");
    }
  }

  json resolved;
  to_json(resolved, state.config);
  echo(err, "pretrain",
       {{"data", a.data}, {"stage", a.stage}, {"out", a.out}, {"resume", a.resume}, {"max_steps", a.max_steps},
        {"train", resolved}});

  const std::string csv_path = a.loss_csv.empty() ? a.out + ".loss.csv" : a.loss_csv;
  const std::string dump_path = a.dump.empty() ? a.out + ".failure.json" : a.dump;
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw InputError("cannot write " + csv_path);
  csv << "step,itc,inter,itm,intra,reg,total,tau\n";

  Trainer trainer(std::move(state), ds);
  double last_total = 0.0;
  std::size_t steps = 0;
  try {
    trainer.run(last_stage, a.max_steps, [&](const StepRecord& r) {
      const auto& l = r.loss;
      csv << r.step << ',' << fmt17(l.itc) << ',' << fmt17(l.inter) << ',' << fmt17(l.itm) << ',' << fmt17(l.intra)
          << ',' << fmt17(l.reg) << ',' << fmt17(l.total) << ',' << fmt17(r.tau) << '\n';
      last_total = l.total;
      ++steps;
    });
  } catch (const TrainingError& e) {
    csv.flush();
    write_json_file(dump_path, trainer.failure_dump());
    err << "error: training diverged (" << e.component() << "): " << e.what() << "; batch dump written to "
        << dump_path << '\n';
    return kExitNumerical;
  }
  csv.flush();
  if (!csv) throw InputError("write failed for " + csv_path);
  save_checkpoint(trainer.state(), a.out);
  out << "trained " << steps << " steps; stage=" << trainer.state().progress.stage
      << " global_step=" << trainer.state().progress.global_step << "; checkpoint " << a.out << '\n';
  if (!std::isfinite(last_total)) return kExitNumerical;
  return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string task, ckpt, data, report, match_rule = "product", neg_mode = "random", ks = "1,5,10";
  std::uint64_t seed = 0;
  std::size_t scale = 4;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  EvalOptions opt;
  opt.match_rule = parse_match_rule(a.match_rule);
  opt.neg_mode = parse_negative_mode(a.neg_mode);
  opt.ks = parse_ks(a.ks);
  opt.seed = a.seed;
  opt.map_scale = a.scale;
  if (opt.map_scale == 0) throw InputError("--scale must be positive");

  const TrainState st = load_checkpoint(a.ckpt);
  const bool needs_decoder = a.task == "classify" || a.task == "product-retrieval";
  if (a.task != "classify" && a.task != "itc-retrieval" && a.task != "product-retrieval" && a.task != "grounding") {
    throw InputError("unknown --task '" + a.task + "'");
  }
  const auto& pr = st.progress;
  const bool decoder_trained =
      st.config.stage2_epochs > 0 && (pr.stage > 2 || (pr.stage == 2 && (pr.epoch > 0 || pr.batch > 0)));
  if (needs_decoder && !decoder_trained) {
    throw InputError("task '" + a.task + "' needs a checkpoint that reached stage 2 (decoder is untrained)");
  }
  if (opt.neg_mode == NegativeMode::ema && st.query_ema_updates == 0) {
    throw InputError("--neg-mode ema needs a checkpoint with recorded query averages");
  }
  json train;
  to_json(train, st.config);
  echo(err, "eval",
       {{"task", a.task}, {"ckpt", a.ckpt}, {"data", a.data}, {"report", a.report}, {"match_rule", to_string(opt.match_rule)},
        {"neg_mode", to_string(opt.neg_mode)}, {"ks", opt.ks}, {"seed", opt.seed}, {"scale", opt.map_scale}});

  const Dataset ds = load_manifest(a.data);
  if (ds.size() == 0) throw InputError("dataset is empty");
  const auto& model = st.model;
  json report;
  if (a.task == "classify") {
    report = evaluate_classification(model, ds, opt, st.query_ema);
  } else if (a.task == "itc-retrieval") {
    report = evaluate_itc_retrieval(model, ds, opt);
  } else if (a.task == "product-retrieval") {
    report = evaluate_product_retrieval(model, ds, opt, st.query_ema);
  } else {
    report = evaluate_grounding(model, ds, opt);
  }
  report["checkpoint"] = {{"path", a.ckpt}, {"global_step", st.progress.global_step}, {"config", train}};
  write_json_file(a.report, report);
  out << report["metrics"].dump() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- ground

struct GroundArgs {
  std::string ckpt, image, text, query_image, proposals, out_map, out, map_tensor;
  std::size_t scale = 4;
};

int cmd_ground(const GroundArgs& a, std::ostream& out, std::ostream& err) {
  if (a.text.empty() == a.query_image.empty()) throw InputError("pass exactly one of --text or --query-image");
  if (a.scale == 0) throw InputError("--scale must be positive");
  echo(err, "ground",
       {{"ckpt", a.ckpt}, {"image", a.image}, {"text", a.text}, {"query_image", a.query_image},
        {"proposals", a.proposals}, {"out_map", a.out_map}, {"out", a.out}, {"scale", a.scale}});
  if (!fs::exists(a.proposals)) throw InputError("proposals file not found: " + a.proposals);
  const auto proposals = parse_proposals(read_json_file(a.proposals));

  const TrainState st = load_checkpoint(a.ckpt);
  const auto& model = st.model;
  const auto image = load_image(a.image);
  validate(image, model.config().image);
  Tensor prompt;
  if (!a.text.empty()) {
    TextSample t{parse_token_ids(a.text), model.config().text.vocab_size};
    validate(t, model.config().text);
    prompt = text_prompt(model, t);
  } else {
    const auto q = load_image(a.query_image);
    validate(q, model.config().image);
    prompt = image_prompt(model, q);
  }
  const auto map = grounding_score_map(model, image, prompt, a.scale);
  const auto ranked = rank_boxes(map, proposals);
  write_pgm(a.out_map, map);
  if (!a.map_tensor.empty()) save_score_map(a.map_tensor, map);
  json result{{"prompt", a.text.empty() ? "image" : "text"},
              {"map", {{"height", map.height}, {"width", map.width}, {"path", a.out_map}}},
              {"top", ranked_boxes_json({ranked.front()}).at(0)},
              {"ranked", ranked_boxes_json(ranked)}};
  if (a.out.empty()) {
    out << result.dump(2) << '\n';
  } else {
    write_json_file(a.out, result);
    out << result["top"].dump() << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------- gradcheck

int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& out, std::ostream& err) {
  if (!(opt.tol > 0.0)) throw InputError("--tol must be positive");
  if (opt.seeds == 0) throw InputError("--seeds must be positive");
  json model;
  to_json(model, opt.model);
  echo(err, "gradcheck",
       {{"seed", opt.seed}, {"seeds", opt.seeds}, {"encoder_seeds", opt.encoder_seeds}, {"tol", opt.tol},
        {"eps", opt.eps}, {"directions", opt.directions}, {"model", model}});
  const auto report = run_gradcheck(opt);
  bool ok = true;
  for (const auto& c : report.components) {
    const bool pass = c.worst <= opt.tol;
    ok = ok && pass;
    char line[128];
    std::snprintf(line, sizeof line, "%-8s worst_rel_err=%.3e checks=%zu %s", c.name.c_str(), c.worst, c.checks,
                  pass ? "ok" : "FAIL");
    out << line << '\n';
  }
  out << (ok ? "gradcheck passed" : "gradcheck FAILED") << '\n';
  return ok ? kExitOk : kExitNumerical;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"eclip: instance-centric multi-modal pretraining at desk scale", "eclip"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic multi-source product dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--products", gen.products, "Number of products");
  g->add_option("--sources", gen.sources, "Sources per product");
  g->add_option("--seed", gen.seed, "Dataset seed");
  g->add_option("--first-id", gen.first_id, "Id of the first product");
  g->add_option("--config", gen.config, "Generator config JSON");
  g->add_flag("--force", gen.force, "Write into a non-empty directory");

  PretrainArgs pre;
  auto* p = app.add_subcommand("pretrain", "Run stage 1, stage 2 or both");
  p->add_option("--data", pre.data, "Dataset manifest")->required();
  p->add_option("--config", pre.config, "Training config JSON");
  p->add_option("--stage", pre.stage, "1, 2 or all");
  p->add_option("--out", pre.out, "Checkpoint to write")->required();
  p->add_option("--resume", pre.resume, "Checkpoint to continue from");
  p->add_option("--loss-csv", pre.loss_csv, "Per-step loss log (default <out>.loss.csv)");
  p->add_option("--dump", pre.dump, "Failure dump path (default <out>.failure.json)");
  p->add_option("--max-steps", pre.max_steps, "Stop after this many steps (0 = no limit)");
  p->add_option("--seed", pre.seed, "Override the config seed");
  p->add_option("--batch-size", pre.batch_size, "Override batch_size");
  p->add_option("--stage1-epochs", pre.stage1_epochs, "Override stage1_epochs");
  p->add_option("--stage2-epochs", pre.stage2_epochs, "Override stage2_epochs");
  p->add_option("--num-queries", pre.num_queries, "Override the decoder query count");
  p->add_option("--lr-encoder", pre.lr_encoder, "Override lr_encoder");
  p->add_option("--lr-rest", pre.lr_rest, "Override lr_rest");
  p->add_option("--weights", pre.weights, "Loss weights itc,inter,itm,intra,reg");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Zero-shot evaluation");
  e->add_option("--task", ev.task, "classify, itc-retrieval, product-retrieval or grounding")->required();
  e->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  e->add_option("--data", ev.data, "Dataset manifest")->required();
  e->add_option("--report", ev.report, "JSON report path")->required();
  e->add_option("--match-rule", ev.match_rule, "category or product");
  e->add_option("--neg-mode", ev.neg_mode, "random, text or ema");
  e->add_option("--ks", ev.ks, "Comma separated K values");
  e->add_option("--seed", ev.seed, "Seed for Gaussian negative queries");
  e->add_option("--scale", ev.scale, "Score map upsampling factor");

  GroundArgs gr;
  auto* r = app.add_subcommand("ground", "Score map and ranked proposals for one image");
  r->add_option("--ckpt", gr.ckpt, "Checkpoint")->required();
  r->add_option("--image", gr.image, "Image tensor [H, W, D_in]")->required();
  r->add_option("--text", gr.text, "Prompt token ids");
  r->add_option("--query-image", gr.query_image, "Prompt image tensor");
  r->add_option("--proposals", gr.proposals, "JSON list of [x1, y1, x2, y2]")->required();
  r->add_option("--out-map", gr.out_map, "Score map PGM")->required();
  r->add_option("--out", gr.out, "Ranked proposals JSON (default stdout)");
  r->add_option("--map-tensor", gr.map_tensor, "Also dump the score map as a tensor file");
  r->add_option("--scale", gr.scale, "Score map upsampling factor");

  GradcheckOptions gc;
  auto* c = app.add_subcommand("gradcheck", "Finite-difference audit of all gradients");
  c->add_option("--seed", gc.seed, "Base seed");
  c->add_option("--tol", gc.tol, "Max relative error");
  c->add_option("--seeds", gc.seeds, "Random instances per component");
  c->add_option("--encoder-seeds", gc.encoder_seeds, "Random instances for the encoders");
  c->add_option("--directions", gc.directions, "Random directions per parameter tensor");

  std::vector<std::string> argv_store{"eclip"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitInput;
  }

  try {
    if (g->parsed()) return cmd_gen_data(gen, out, err);
    if (p->parsed()) return cmd_pretrain(pre, out, err);
    if (e->parsed()) return cmd_eval(ev, out, err);
    if (r->parsed()) return cmd_ground(gr, out, err);
    if (c->parsed()) return cmd_gradcheck(gc, out, err);
  } catch (const TrainingError& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitNumerical;
  } catch (const Error& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitInput;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return 1;
  }
  return kExitInput;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace eclip::cli
