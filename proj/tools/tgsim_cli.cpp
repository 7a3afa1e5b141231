// tgsim command-line driver: weight generation, single runs, sweeps.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "tgsim/cluster.hpp"
#include "tgsim/weights.hpp"

namespace {

using namespace tgsim;

std::vector<int32_t> parse_id_list(const std::string& s) {
  std::vector<int32_t> ids;
  std::stringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ','))
    if (!tok.empty()) ids.push_back(std::stoi(tok));
  return ids;
}

// Flat key = value overrides for the model-independent constants.
void apply_config_file(ClusterConfig& cl, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file '" + path + "'");
  std::string line;
  int lineno = 0;
  int geom_d = cl.geom.d, geom_l = cl.geom.l, geom_bw = cl.geom.bw_data;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::string key, eq, value;
    std::istringstream ls(line);
    if (!(ls >> key)) continue;
    if (!(ls >> eq >> value) || eq != "=")
      throw Error("config line " + std::to_string(lineno) +
                  ": expected 'key = value'");
    const double v = std::stod(value);
    if (key == "geom.d") geom_d = int(v);
    else if (key == "geom.l") geom_l = int(v);
    else if (key == "geom.bw_data") geom_bw = int(v);
    else if (key == "link.bits_per_cycle") cl.link.bits_per_cycle = v;
    else if (key == "link.efficiency") cl.link.efficiency = v;
    else if (key == "link.hop_latency") cl.link.hop_latency = int64_t(v);
    else if (key == "lat.mul") cl.lat.mul = int(v);
    else if (key == "lat.add") cl.lat.add = int(v);
    else if (key == "lat.sub") cl.lat.sub = int(v);
    else if (key == "lat.exp") cl.lat.exp = int(v);
    else if (key == "lat.load_store") cl.lat.load_store = int(v);
    else if (key == "lat.recip") cl.lat.recip = int(v);
    else if (key == "lat.recip_sqrt") cl.lat.recip_sqrt = int(v);
    else if (key == "lat.gelu") cl.lat.gelu = int(v);
    else if (key == "lat.cmp_stage") cl.lat.cmp_stage = int(v);
    else if (key == "ddr.bytes_per_cycle") cl.ddr_bytes_per_cycle = int64_t(v);
    else if (key == "clock_hz") cl.clock_hz = v;
    else throw Error("config line " + std::to_string(lineno) +
                     ": unknown key '" + key + "'");
  }
  cl.geom = TileGeom(geom_d, geom_l, geom_bw);
}

void print_stats_table(const RunStats& st, std::ostream& os) {
  os << "cycles total           " << st.total_cycles << "\n";
  for (int c = 0; c < kNumStatCats; ++c) {
    const auto cat = StatCat(c);
    os << "  " << stat_cat_name(cat);
    for (size_t pad = std::string(stat_cat_name(cat)).size(); pad < 20; ++pad)
      os << ' ';
    os << st.cat(cat);
    if (st.total_cycles)
      os << "  (" << 100.0 * double(st.cat(cat)) / double(st.total_cycles)
         << "%)";
    os << "\n";
  }
  os << "modeled wall time      " << st.wall_seconds() * 1e3 << " ms\n";
  os << "tokens/sec modeled     " << st.tokens_per_sec() << "\n";
  os << "hazard violations      " << st.hazard_violations << "\n";
  os << "value-transpose stalls " << st.value_transpose_stalls << "\n";
}

struct SweepPoint {
  int n_in, n_out, cores;
};

std::vector<SweepPoint> parse_points(const std::string& s) {
  std::vector<SweepPoint> pts;
  std::stringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    SweepPoint p{};
    if (std::sscanf(tok.c_str(), "%dx%dx%d", &p.n_in, &p.n_out, &p.cores) != 3)
      throw Error("bad sweep point '" + tok + "' (want INxOUTxCORES)");
    pts.push_back(p);
  }
  return pts;
}

int cmd_genweights(const std::string& model, uint64_t seed,
                   const std::string& out_path) {
  const GPTConfig cfg = config_for(model);
  const ModelWeights w = generate_weights(cfg, seed);
  save_weights(w, out_path);
  std::cout << "wrote " << out_path << " (" << w.param_count()
            << " parameters, seed " << seed << ")\n";
  return 0;
}

int cmd_run(const std::string& weights_path, const std::string& input_ids,
            int n_out, int cores, uint64_t seed, const std::string& emit_asm,
            const std::string& stats_out, const std::string& config_path) {
  {
    std::ifstream probe(weights_path);
    if (!probe) {
      std::cerr << "error: weight file not found: " << weights_path << "\n";
      return 2;
    }
  }
  const ModelWeights w = load_weights(weights_path);
  ClusterConfig cl;
  cl.model = w.cfg;
  cl.n_cores = cores;
  if (!config_path.empty()) apply_config_file(cl, config_path);
  cl.validate();

  TokenSeq input{parse_id_list(input_ids)};
  if (input.ids.empty()) throw Error("run: --input-ids is empty");

  if (!emit_asm.empty()) {
    for (const ShardSpec& s : make_shards(cl.model, cl.n_cores)) {
      const Program p =
          emit_full_program(cl.model, s, int(input.ids.size()), n_out, cl.geom);
      const std::string path =
          emit_asm + ".core" + std::to_string(s.core_id) + ".asm";
      std::ofstream out(path);
      if (!out) throw Error("cannot write '" + path + "'");
      out << format(p);
      std::cout << "wrote " << path << "\n";
    }
  }

  const RunResult r = run_generation(cl, w, input, n_out, seed);

  std::cout << "tokens:";
  for (int32_t t : r.tokens.ids) std::cout << " " << t;
  std::cout << "\n";
  print_stats_table(r.stats, std::cout);

  const std::string csv = RunStats::csv_header() + "\n" +
                          r.stats.csv_row(cl.hash(), int(input.ids.size()),
                                          n_out, cl.n_cores) +
                          "\n";
  if (!stats_out.empty()) {
    std::ofstream out(stats_out);
    if (!out) throw Error("cannot write '" + stats_out + "'");
    out << csv;
  } else {
    std::cout << csv;
  }
  return 0;
}

int cmd_sweep(const std::string& weights_path, const std::string& points,
              uint64_t seed, const std::string& stats_out,
              const std::string& config_path) {
  {
    std::ifstream probe(weights_path);
    if (!probe) {
      std::cerr << "error: weight file not found: " << weights_path << "\n";
      return 2;
    }
  }
  const ModelWeights w = load_weights(weights_path);
  std::ostringstream csv;
  csv << RunStats::csv_header() << "\n";
  bool any_failed = false;
  for (const SweepPoint& p : parse_points(points)) {
    try {
      ClusterConfig cl;
      cl.model = w.cfg;
      cl.n_cores = p.cores;
      if (!config_path.empty()) apply_config_file(cl, config_path);
      cl.validate();
      TokenSeq input;
      for (int i = 0; i < p.n_in; ++i)
        input.ids.push_back(
            int32_t((seed + 31 * uint64_t(i)) % uint64_t(w.cfg.vocab)));
      const RunResult r = run_generation(cl, w, input, p.n_out, seed);
      csv << r.stats.csv_row(cl.hash(), p.n_in, p.n_out, p.cores) << "\n";
    } catch (const std::exception& e) {
      csv << "error," << p.n_in << "," << p.n_out << "," << p.cores << ",\""
          << e.what() << "\"\n";
      any_failed = true;
    }
    // flush partial results as points complete
    if (!stats_out.empty()) {
      std::ofstream out(stats_out);
      out << csv.str();
    }
  }
  if (stats_out.empty())
    std::cout << csv.str();
  else
    std::cout << "wrote " << stats_out << "\n";
  return any_failed ? 1 : 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"cycle-analytic simulator for a model-parallel fp16 "
               "text-generation accelerator"};
  app.require_subcommand(1);

  std::string model = "tiny", out_path;
  uint64_t seed = 0;
  auto* gen = app.add_subcommand("genweights",
                                 "generate a seeded random weight file");
  gen->add_option("--model", model, "preset name or config literal");
  gen->add_option("--seed", seed, "rng seed");
  gen->add_option("--out", out_path, "output path")->required();

  std::string weights_path, input_ids = "0", emit_asm, stats_out, config_path;
  int n_out = 1, cores = 1;
  auto* run = app.add_subcommand("run", "run generation on a weight file");
  run->add_option("--weights", weights_path, "weight file")->required();
  run->add_option("--input-ids", input_ids, "comma-separated token ids");
  run->add_option("--n-out", n_out, "output token count");
  run->add_option("--cores", cores, "cluster size (1, 2, 4 or 8)");
  run->add_option("--seed", seed, "rng seed (interface compatibility)");
  run->add_option("--emit-asm", emit_asm,
                  "dump per-core assembly to PREFIX.coreN.asm");
  run->add_option("--stats-out", stats_out, "write the stats CSV here");
  run->add_option("--config", config_path, "constants override file");

  std::string points = "8x8x1";
  auto* sweep = app.add_subcommand(
      "sweep", "run a grid of (n_in x n_out x cores) points");
  sweep->add_option("--weights", weights_path, "weight file")->required();
  sweep->add_option("--points", points, "e.g. 64x64x1,64x64x2,64x64x4");
  sweep->add_option("--seed", seed, "rng seed for the input ids");
  sweep->add_option("--stats-out", stats_out, "write the CSV here");
  sweep->add_option("--config", config_path, "constants override file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_genweights(model, seed, out_path);
    if (run->parsed())
      return cmd_run(weights_path, input_ids, n_out, cores, seed, emit_asm,
                     stats_out, config_path);
    if (sweep->parsed())
      return cmd_sweep(weights_path, points, seed, stats_out, config_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
