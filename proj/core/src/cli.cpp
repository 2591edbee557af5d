#include "lcq/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "lcq/block.hpp"
#include "lcq/half.hpp"
#include "lcq/initializer.hpp"
#include "lcq/storage.hpp"
#include "lcq/trainer.hpp"
#include "lcq/verify.hpp"

namespace lcq {

namespace {

GeneratedModel load_model(const std::string& path) {
  return model_from_tensors(read_lcqt(path));
}

std::vector<Tensor> load_calib(const std::string& path) {
  return calib_from_tensors(read_lcqt(path));
}

std::uint32_t parse_group_size(const std::string& text) {
  if (text == "channel") return kChannelGroups;
  const long v = std::stol(text);
  if (v <= 0) throw ShapeError("group size must be positive or \"channel\"");
  return static_cast<std::uint32_t>(v);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open file for writing: " + path);
  out << text;
}

int cmd_gen(const ModelSpec& spec, const std::vector<std::string>& outs) {
  if (outs.size() != 2) throw ShapeError("gen: --out takes two paths (model, calibration)");
  const GeneratedModel m = gen_calibration(spec);
  write_lcqt(outs[0], model_to_tensors(m));
  write_lcqt(outs[1], calib_to_tensors(m));
  std::cout << "wrote " << outs[0] << " (" << m.blocks.size() << " blocks, dim "
            << m.spec.dim << ") and " << outs[1] << " (" << m.samples.size()
            << " samples)\n";
  return 0;
}

int cmd_quantize(const std::string& model_path, const std::string& calib_path,
                 const QuantConfig& cfg, const std::string& out_path,
                 const std::string& trace_path) {
  GeneratedModel m = load_model(model_path);
  m.samples = load_calib(calib_path);
  m.spec.samples = m.samples.size();

  const ModelQuantizeResult res = quantize_model(m, cfg);
  std::vector<DeployedBlock> deployed;
  for (const BlockRecord& b : res.blocks) deployed.push_back(b.deployed);
  const QuantArtifact artifact = artifact_from_deployed(deployed, cfg);
  write_artifact(out_path, artifact);

  if (!trace_path.empty()) {
    std::string csv = "epoch,mean_loss,lr\n";
    for (const BlockRecord& b : res.blocks)
      for (const EpochStats& e : b.train.trace)
        csv += std::to_string(e.epoch) + "," + std::to_string(e.mean_loss) + "," +
               std::to_string(e.lr) + "\n";
    write_text_file(trace_path, csv);
  }
  for (std::size_t b = 0; b < res.blocks.size(); ++b)
    std::cout << "block " << b << ": initial " << res.blocks[b].train.initial_loss
              << " final " << res.blocks[b].train.final_loss << " deployed "
              << res.blocks[b].deployed_loss << "\n";
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& calib_path,
             const std::string& artifact_path, std::uint64_t seed) {
  GeneratedModel m = load_model(model_path);
  m.samples = load_calib(calib_path);
  const QuantArtifact artifact = read_artifact(artifact_path);
  QuantConfig cfg = artifact.config;
  cfg.seed = seed;
  if (artifact.layers.size() != 6 * m.blocks.size())
    throw ShapeError("eval: artifact layer count does not match the model");

  CalibrationSet features = initial_calibration(m);
  std::cout << "block,initial_loss,final_loss\n";
  for (std::size_t b = 0; b < m.blocks.size(); ++b) {
    const BlockWeights& w = m.blocks[b];
    RngStream rng(substream_seed(cfg.seed, 0x4000 + b));
    const BlockParams init = init_block_params(w, cfg, rng);
    const double initial = block_loss(features.q, features.fp, w, init, cfg);

    BlockWeights deployed_w = w;
    for (std::size_t l = 0; l < 6; ++l)
      deployed_w.layer(l) = transposed(dequantize_layer(artifact, 6 * b + l, cfg.epsilon));
    double final_loss = 0.0;
    for (std::size_t i = 0; i < features.q.size(); ++i) {
      const Tensor yq = block_forward(features.q[i], deployed_w);
      const Tensor tfp = block_forward(features.fp[i], w);
      const Tensor tq = block_forward(features.q[i], w);
      for (std::size_t e = 0; e < yq.numel(); ++e) {
        const double d1 = yq.data[e] - tfp.data[e];
        const double d2 = yq.data[e] - tq.data[e];
        final_loss += d1 * d1 + d2 * d2;
      }
    }
    std::cout << b << "," << initial << "," << final_loss << "\n";

    for (std::size_t i = 0; i < features.fp.size(); ++i) {
      features.fp[i] = block_forward(features.fp[i], w);
      features.q[i] = block_forward(features.q[i], deployed_w);
    }
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, double tolerance, std::size_t points) {
  GradcheckOptions opts;
  opts.seed = seed;
  opts.points = points;
  opts.tolerance = tolerance;
  const GradcheckReport rep = gradcheck_suite(opts);
  std::cout << "gradcheck: " << rep.points_checked << " points, " << rep.coordinates
            << " coordinates each, " << rep.measured << " measured, "
            << rep.below_resolution << " below f64 resolution, max relative error "
            << rep.max_rel_error << "\n";
  if (rep.max_rel_error > tolerance) {
    std::cerr << "gradcheck failed: " << rep.max_rel_error << " > " << tolerance << "\n";
    return 1;
  }
  return 0;
}

int cmd_inspect(const std::string& artifact_path, const std::string& stats_path) {
  const auto bytes = read_file_bytes(artifact_path);
  const QuantArtifact a = decode_artifact(bytes);
  const QuantConfig& cfg = a.config;

  std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes;
  for (const ArtifactLayer& l : a.layers) shapes.emplace_back(l.rows, l.cols);
  const RetentionReport ret = retention_rate(cfg, shapes);

  std::cout << "bits: " << cfg.bits << "\n";
  if (cfg.group_size == kChannelGroups)
    std::cout << "group_size: channel\n";
  else
    std::cout << "group_size: " << cfg.group_size << "\n";
  std::cout << "rank: " << cfg.rank << "\n";
  std::cout << "groups_per_subset: " << cfg.groups_per_subset << "\n";
  std::cout << "levels: " << cfg.levels() << "\n";
  std::cout << "dq_bits_s: " << cfg.dq_bits_s << "\n";
  std::cout << "dq_bits_v: " << cfg.dq_bits_v << "\n";
  std::cout << "dq_group: " << cfg.dq_group << "\n";
  std::cout << "layers: " << a.layers.size() << "\n";
  std::cout << "file_bytes: " << bytes.size() << "\n";
  std::cout << "header_bytes: " << artifact_header_bytes(a) << "\n";
  std::cout << "section_bytes: " << ret.section_bytes << "\n";
  std::cout << "weights: " << ret.weight_count << "\n";
  std::cout << "retention_rate: " << ret.ratio << "\n";
  for (const ArtifactLayer& l : a.layers) {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> one{{l.rows, l.cols}};
    std::cout << "layer " << l.name << ": " << l.rows << "x" << l.cols << ", "
              << l.subsets.size() << " subsets, "
              << retention_rate(cfg, one).section_bytes << " bytes\n";
  }

  if (!stats_path.empty()) {
    std::string csv = "layer,subset,rank,group,scale\n";
    for (const ArtifactLayer& l : a.layers) {
      for (std::size_t s = 0; s < l.subsets.size(); ++s) {
        const ArtifactSubset& sub = l.subsets[s];
        for (std::size_t g = 0; g < sub.s1_half.size(); ++g)
          csv += l.name + "," + std::to_string(s) + ",1," + std::to_string(g) + "," +
                 std::to_string(half_to_double(sub.s1_half[g])) + "\n";
        for (std::size_t r = 0; r < sub.s_rows.size(); ++r) {
          const auto rec = dq_reconstruct(sub.s_rows[r]);
          for (std::size_t g = 0; g < rec.size(); ++g)
            csv += l.name + "," + std::to_string(s) + "," + std::to_string(r + 2) + "," +
                   std::to_string(g) + "," + std::to_string(rec[g]) + "\n";
        }
      }
    }
    if (stats_path == "-")
      std::cout << csv;
    else
      write_text_file(stats_path, csv);
  }
  return 0;
}

int cmd_oracle(std::uint64_t seed, std::size_t cases) {
  const OracleFuzzReport rep = oracle_equivalence_fuzz(seed, cases);
  std::cout << "oracle fuzz: " << rep.cases << " cases, " << rep.mismatches
            << " mismatches\n";
  if (rep.mismatches) {
    std::cerr << "first mismatch: " << rep.first_mismatch << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"low-rank codebook weight quantization pipeline"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "emit a synthetic model and calibration set");
  ModelSpec spec;
  std::vector<std::string> gen_out;
  gen->add_option("--seed", spec.seed, "rng seed");
  gen->add_option("--blocks", spec.blocks, "transformer block count");
  gen->add_option("--dim", spec.dim, "feature dimension");
  gen->add_option("--ff-dim", spec.ff_dim, "feed-forward dimension");
  gen->add_option("--heads", spec.heads, "attention heads");
  gen->add_option("--samples", spec.samples, "calibration sample count");
  gen->add_option("--seq-len", spec.seq_len, "sequence length");
  gen->add_option("--out", gen_out, "output paths: model.lcqt calib.lcqt")
      ->expected(2)
      ->required();

  // quantize
  auto* qz = app.add_subcommand("quantize", "quantize a model against calibration data");
  std::string q_model, q_calib, q_out, q_trace, q_group = "8";
  QuantConfig cfg;
  qz->add_option("--model", q_model, "model container")->required();
  qz->add_option("--calib", q_calib, "calibration container")->required();
  qz->add_option("--bits", cfg.bits, "quantization bit width");
  qz->add_option("--group-size", q_group, "weight group size (int or \"channel\")");
  qz->add_option("--rank", cfg.rank, "codebook rank");
  qz->add_option("--ng", cfg.groups_per_subset, "groups per subset");
  qz->add_option("--epochs", cfg.epochs, "training epochs");
  qz->add_option("--lr", cfg.lr, "initial learning rate");
  qz->add_option("--batch", cfg.batch, "batch size");
  qz->add_option("--dq-bits-s", cfg.dq_bits_s, "double-quantization bits for scales");
  qz->add_option("--dq-bits-v", cfg.dq_bits_v, "double-quantization bits for QPS");
  qz->add_option("--dq-group", cfg.dq_group, "double-quantization group size");
  qz->add_option("--seed", cfg.seed, "rng seed");
  qz->add_option("--out", q_out, "output artifact path")->required();
  qz->add_option("--trace", q_trace, "loss trace CSV path");

  // eval
  auto* ev = app.add_subcommand("eval", "report per-block reconstruction losses");
  std::string e_model, e_calib, e_artifact;
  std::uint64_t e_seed = 0;
  ev->add_option("--model", e_model, "model container")->required();
  ev->add_option("--calib", e_calib, "calibration container")->required();
  ev->add_option("--artifact", e_artifact, "quantization artifact")->required();
  ev->add_option("--seed", e_seed, "seed used when the artifact was produced");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-4;
  std::size_t gc_points = 100;
  gc->add_option("--seed", gc_seed, "rng seed");
  gc->add_option("--tolerance", gc_tol, "max allowed relative error");
  gc->add_option("--points", gc_points, "number of check points");

  // inspect
  auto* in = app.add_subcommand("inspect", "dump artifact header and sizes");
  std::string i_artifact, i_stats;
  in->add_option("--artifact", i_artifact, "quantization artifact")->required();
  in->add_option("--stats", i_stats, "write scale distributions as CSV (\"-\" = stdout)");

  // oracle
  auto* orc = app.add_subcommand("oracle", "quantizer equivalence fuzz");
  std::uint64_t o_seed = 0;
  std::size_t o_cases = 100000;
  orc->add_option("--cases", o_cases, "number of weight/codebook cases");
  orc->add_option("--seed", o_seed, "rng seed");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      app.exit(e);
      return 0;
    }
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen(spec, gen_out);
    if (qz->parsed()) {
      cfg.group_size = parse_group_size(q_group);
      cfg.validate();
      return cmd_quantize(q_model, q_calib, cfg, q_out, q_trace);
    }
    if (ev->parsed()) return cmd_eval(e_model, e_calib, e_artifact, e_seed);
    if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_tol, gc_points);
    if (in->parsed()) return cmd_inspect(i_artifact, i_stats);
    if (orc->parsed()) return cmd_oracle(o_seed, o_cases);
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace lcq
