// Experiment runner: map validation, escape partitions, full-return
// partitions, tower checks, and quenched correlations, with reproducible
// seeded configs and CSV outputs.
//
// Exit codes: 0 all checks passed, 1 a scientific check failed, 2 bad usage
// or configuration.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "rlm/rlm.hpp"

namespace fs = std::filesystem;
using namespace rlm;

namespace {

struct CliContext {
  RunConfig cfg;
  std::string out_dir;
  bool quiet = false;
};

void say(const CliContext& ctx, const std::string& msg) {
  if (!ctx.quiet) std::cout << msg << "\n";
}

void write_manifest(const CliContext& ctx, const std::string& command) {
  std::ostringstream os;
  os << "command=" << command << "\n" << "format=1\n" << ctx.cfg.to_kv();
  write_file(ctx.out_dir + "/manifest.txt", os.str());
}

std::uint64_t member_seed(const RunConfig& cfg, int k) {
  return splitmix64(cfg.seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(k + 1));
}

Interval parse_j0(const RunConfig& cfg, const PartitionConfig& part) {
  if (cfg.escape_j0 == "delta0") return {-part.delta(), part.delta()};
  auto comma = cfg.escape_j0.find(',');
  if (comma == std::string::npos)
    throw std::invalid_argument("escape.j0 must be 'delta0' or 'lo,hi'");
  return {std::stod(cfg.escape_j0.substr(0, comma)), std::stod(cfg.escape_j0.substr(comma + 1))};
}

std::string itinerary_digest(const EscapeElement& e) {
  if (e.itinerary.empty()) return "-";
  std::ostringstream os;
  for (const auto& ev : e.itinerary) {
    if (&ev != &e.itinerary.front()) os << "|";
    switch (ev.kind) {
      case EventKind::InessentialReturn: os << "i"; break;
      case EventKind::EssentialReturn: os << "e"; break;
      case EventKind::Escape: os << "E"; break;
      default: os << "f"; break;
    }
    os << ev.time;
    if (ev.depth != 0) os << "@" << ev.depth;
  }
  return os.str();
}

int cmd_check_map(const CliContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  FamilyRange range = cfg.family();
  std::ostringstream rep;
  bool ok = true;
  rep << "lambda,c_est,order_pass,k_est,holder_pass\n";
  const int kSamples = 9;
  for (int i = 0; i < kSamples; ++i) {
    double lam = range.lambda_lo + range.width() * i / std::max(kSamples - 1, 1);
    if (range.width() == 0.0) lam = range.lambda_lo;
    MapParams p = MapParams::standard(lam, range.alpha);
    auto so = validate_singularity_order(p, 512);
    auto hl = validate_local_holder(p, 2000);
    ok = ok && so.pass && hl.pass;
    rep << fmt_g17(lam) << "," << fmt_g17(so.c_est) << "," << so.pass << ","
        << fmt_g17(hl.k_est) << "," << hl.pass << "\n";
    if (range.width() == 0.0) break;
  }
  rep << "\nomega,c_tilde,ell,expansion_pass\n";
  auto samples = default_expansion_samples();
  for (int k = 0; k < std::max(cfg.ensemble, 1); ++k) {
    OmegaSequence w = OmegaSequence::sample(member_seed(cfg, k), 0, 40, range);
    auto est = check_uniform_expansion(w, samples, 30);
    ok = ok && est.pass;
    rep << k << "," << fmt_g17(est.c_tilde) << "," << fmt_g17(est.ell) << "," << est.pass << "\n";
  }
  // density of the singularity's preimages (transitivity proxy)
  OmegaSequence w0 = OmegaSequence::sample(member_seed(cfg, 0), 0, 40, range);
  PreimageSet pre = preimages_of_zero(w0, 14);
  rep << "\npreimage_depth=14 count=" << pre.points.size()
      << " max_gap=" << fmt_g17(pre.max_gap) << "\n";
  rep << "overall=" << (ok ? "pass" : "fail") << "\n";
  write_file(ctx.out_dir + "/check_map.txt", rep.str());
  write_manifest(ctx, "check-map");
  say(ctx, std::string("check-map: ") + (ok ? "pass" : "fail"));
  return ok ? 0 : 1;
}

int cmd_escape(const CliContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  PartitionConfig part = cfg.partition();
  EscapeOptions opts = cfg.escape_options();
  Interval j0 = parse_j0(cfg, part);
  bool ok = true;
  std::ostringstream fits;
  fits << "member,c,rate,r2,n_lo,n_hi,residual_frac\n";
  for (int k = 0; k < std::max(cfg.ensemble, 1); ++k) {
    OmegaSequence w =
        OmegaSequence::sample(member_seed(cfg, k), 0, cfg.escape_n_cap + 1, cfg.family());
    write_file(ctx.out_dir + "/omega_" + std::to_string(k) + ".csv", w.to_csv());
    EscapeResult res = build_escape_partition(w, j0, part, opts);
    std::ostringstream csv;
    csv << "element_id,lo,hi,E,R,ancestor_id,itinerary\n";
    for (const auto& e : res.elements)
      csv << e.id << "," << fmt_g17(e.interval.lo) << "," << fmt_g17(e.interval.hi) << ","
          << e.escape_time << "," << e.total_depth << "," << e.ancestor << ","
          << itinerary_digest(e) << "\n";
    write_file(ctx.out_dir + "/escape_" + std::to_string(k) + ".csv", csv.str());
    std::ostringstream tails;
    tails << "n,tail\n";
    for (int n = 0; n <= cfg.escape_n_cap; ++n)
      tails << n << "," << fmt_g17(escape_tail(res, n)) << "\n";
    write_file(ctx.out_dir + "/escape_tails_" + std::to_string(k) + ".csv", tails.str());
    TailFit fit = fit_escape_tail(res, 5, 40);
    double resid_frac = res.residual_total() / res.j0_width;
    fits << k << "," << fmt_g17(fit.c) << "," << fmt_g17(fit.rate) << "," << fmt_g17(fit.r2)
         << "," << fit.n_lo << "," << fit.n_hi << "," << fmt_g17(resid_frac) << "\n";
    ok = ok && fit.ok && fit.rate > 0.0;
    if (resid_frac > 0.5) ok = false;  // e.g. n_cap far too small
  }
  write_file(ctx.out_dir + "/escape_fits.csv", fits.str());
  write_manifest(ctx, "escape");
  say(ctx, std::string("escape: ") + (ok ? "pass" : "fail"));
  return ok ? 0 : 1;
}

int cmd_returns(const CliContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  PartitionConfig part = cfg.partition();
  ReturnOptions opts = cfg.return_options();
  bool ok = true;
  std::ostringstream fits;
  fits << "member,b,r2,n_lo,n_hi,beta_min,markov_err,residual_frac,unreturned\n";
  for (int k = 0; k < std::max(cfg.ensemble, 1); ++k) {
    OmegaSequence w = OmegaSequence::sample(member_seed(cfg, k), 0,
                                            cfg.returns_n_cap + cfg.t_star + 2, cfg.family());
    write_file(ctx.out_dir + "/omega_" + std::to_string(k) + ".csv", w.to_csv());
    ReturnPartition q = build_return_partition(w, part, opts);
    std::ostringstream csv;
    csv << "element_id,lo,hi,tau,escapes,t\n";
    for (const auto& e : q.elements) {
      csv << e.id << "," << fmt_g17(e.interval.lo) << "," << fmt_g17(e.interval.hi) << ","
          << e.tau << ",";
      for (size_t i = 0; i < e.escapes.size(); ++i) csv << (i ? ";" : "") << e.escapes[i];
      csv << "," << e.t_post << "\n";
    }
    write_file(ctx.out_dir + "/returns_" + std::to_string(k) + ".csv", csv.str());
    std::ostringstream tails;
    tails << "n,tail\n";
    for (int n = 0; n <= cfg.returns_n_cap; ++n)
      tails << n << "," << fmt_g17(return_tail(q, n)) << "\n";
    write_file(ctx.out_dir + "/returns_tails_" + std::to_string(k) + ".csv", tails.str());
    TailFit fit = fit_return_tail(q, 10, 60);
    MarkovReport mk = verify_markov(w, q);
    double resid_frac = q.residual_total() / q.domain_width;
    fits << k << "," << fmt_g17(fit.rate) << "," << fmt_g17(fit.r2) << "," << fit.n_lo << ","
         << fit.n_hi << "," << fmt_g17(q.beta_min) << "," << fmt_g17(mk.max_endpoint_err) << ","
         << fmt_g17(resid_frac) << "," << q.unreturned_count << "\n";
    ok = ok && fit.ok && fit.rate > 0.0 && mk.monotone_ok && mk.max_endpoint_err <= 1e-9;
    if (cfg.returns_residual_fail_frac > 0.0 && resid_frac > cfg.returns_residual_fail_frac)
      ok = false;
  }
  write_file(ctx.out_dir + "/returns_fits.csv", fits.str());
  write_manifest(ctx, "returns");
  say(ctx, std::string("returns: ") + (ok ? "pass" : "fail"));
  return ok ? 0 : 1;
}

int cmd_tower(const CliContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  PartitionConfig part = cfg.partition();
  ReturnOptions opts = cfg.return_options();
  int span = cfg.returns_n_cap + cfg.t_star + 2;
  OmegaSequence w = OmegaSequence::sample(member_seed(cfg, 0), cfg.height_cap + span,
                                          10 * span, cfg.family());
  write_file(ctx.out_dir + "/omega_0.csv", w.to_csv());
  Tower tower = build_tower(w, part, opts, cfg.height_cap);
  std::ostringstream lv;
  lv << "level,mass\n";
  for (int l = 0; l < tower.height_cap; ++l)
    lv << l << "," << fmt_g17(tower.level_mass[l]) << "\n";
  write_file(ctx.out_dir + "/tower_levels.csv", lv.str());

  ReturnPartitionCache cache(w, part, opts);
  std::vector<const ReturnPartition*> aps;
  for (int l = 0; l < tower.height_cap; ++l) aps.push_back(tower.fibers[l].get());
  TowerConditionsReport rep = check_tower_conditions(tower, cache, aps, 10, 60);
  std::ostringstream os;
  os << "total_mass=" << fmt_g17(tower.total_mass) << "\n"
     << "truncation_mass=" << fmt_g17(tower.truncation_mass) << "\n";
  for (const auto& item : rep.items)
    os << item.name << ": " << (item.pass ? "pass" : "fail") << " value="
       << fmt_g17(item.value) << (item.note.empty() ? "" : " (" + item.note + ")") << "\n";
  os << "overall=" << (rep.all_pass ? "pass" : "fail") << "\n";
  write_file(ctx.out_dir + "/tower_conditions.txt", os.str());
  write_manifest(ctx, "tower");
  say(ctx, std::string("tower: ") + (rep.all_pass ? "pass" : "fail"));
  return rep.all_pass ? 0 : 1;
}

int cmd_correlations(const CliContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  Observable phi = make_observable(cfg.phi);
  Observable psi = make_observable(cfg.psi);
  bool swapped_too = cfg.phi != cfg.psi;
  bool ok = true;
  std::ostringstream fits;
  fits << "member,mode,ordering,b,r2,n_lo,n_hi,noise_floor\n";
  for (int k = 0; k < std::max(cfg.ensemble, 1); ++k) {
    OmegaSequence w = OmegaSequence::sample(member_seed(cfg, k), cfg.burn_in + cfg.corr_n_max,
                                            cfg.corr_n_max + 1, cfg.family());
    UlamOptions uo;
    uo.bins = cfg.bins;
    uo.burn_in = cfg.burn_in;
    uo.fiber_lo = -cfg.corr_n_max;
    uo.fiber_hi = cfg.corr_n_max;
    UlamResult ulam = estimate_measure_ulam(w, uo);
    for (auto mode : {CorrelationMode::Forward, CorrelationMode::Pullback}) {
      const char* mname = mode == CorrelationMode::Forward ? "forward" : "pullback";
      std::vector<std::pair<std::string, CorrelationSeries>> runs;
      runs.emplace_back(phi.id + "," + psi.id,
                        quenched_correlation(w, phi, psi, cfg.corr_n_max, ulam, mode,
                                             CorrelationQuadrature::Operator));
      if (swapped_too)
        runs.emplace_back(psi.id + "," + phi.id,
                          quenched_correlation(w, psi, phi, cfg.corr_n_max, ulam, mode,
                                               CorrelationQuadrature::Operator));
      std::ostringstream csv;
      csv << "n";
      for (auto& [label, _] : runs) csv << ",C(" << label << ")";
      csv << "\n";
      for (int n = 1; n <= cfg.corr_n_max; ++n) {
        csv << n;
        for (auto& [_, series] : runs) csv << "," << fmt_g17(series.at(n));
        csv << "\n";
      }
      write_file(ctx.out_dir + "/correlations_" + std::to_string(k) + "_" + mname + ".csv",
                 csv.str());
      for (auto& [label, series] : runs) {
        fits << k << "," << mname << "," << label << "," << fmt_g17(series.fit.rate) << ","
             << fmt_g17(series.fit.r2) << "," << series.fit_n_lo << "," << series.fit_n_hi << ","
             << fmt_g17(series.noise_floor) << "\n";
        ok = ok && series.fit.ok && series.fit.rate > 0.0;
      }
    }
  }
  write_file(ctx.out_dir + "/correlation_fits.csv", fits.str());
  write_manifest(ctx, "correlations");
  say(ctx, std::string("correlations: ") + (ok ? "pass" : "fail"));
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"random Lorenz-map partition and correlation experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  bool quiet = false;
  std::uint64_t seed_override = 0;
  bool seed_set = false;
  int ensemble_override = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "configuration file (key=value)")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed_override, "seed override")->each([&](const std::string&) {
      seed_set = true;
    });
    sub->add_option("--ensemble", ensemble_override, "number of omega samples");
    sub->add_flag("--quiet", quiet, "suppress progress output");
  };

  auto* c1 = app.add_subcommand("check-map", "validate the map family and expansion");
  auto* c2 = app.add_subcommand("escape", "build escape partitions and tail fits");
  auto* c3 = app.add_subcommand("returns", "build full-return partitions and tail fits");
  auto* c4 = app.add_subcommand("tower", "assemble the tower and check its conditions");
  auto* c5 = app.add_subcommand("correlations", "estimate measures and quenched correlations");
  for (auto* sub : {c1, c2, c3, c4, c5}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  CliContext ctx;
  ctx.quiet = quiet;
  ctx.out_dir = out_dir;
  try {
    ctx.cfg = RunConfig::from_kv(read_file(config_path));
    if (seed_set) ctx.cfg.seed = seed_override;
    if (ensemble_override > 0) ctx.cfg.ensemble = ensemble_override;
    ctx.cfg.family();     // validate
    ctx.cfg.partition();  // validate
    fs::create_directories(ctx.out_dir);
  } catch (const std::exception& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (c1->parsed()) return cmd_check_map(ctx);
    if (c2->parsed()) return cmd_escape(ctx);
    if (c3->parsed()) return cmd_returns(ctx);
    if (c4->parsed()) return cmd_tower(ctx);
    if (c5->parsed()) return cmd_correlations(ctx);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
