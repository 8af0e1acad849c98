// cag: generate synthetic domains, run adaptation, ablate, evaluate.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "cag/errors.hpp"
#include "cag/experiment.hpp"

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (JSON, comments allowed)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "output directory (default: config output_dir)");
  cmd->add_option("--seed", c.seed, "override the config seed");
}

cag::ExperimentConfig load(const Common& c, std::filesystem::path& out) {
  auto cfg = cag::load_config(c.config);
  if (c.seed) cfg.set_seed(*c.seed);
  cfg.validate();
  out = c.out.empty() ? std::filesystem::path(cfg.output_dir) : std::filesystem::path(c.out);
  return cfg;
}

void print_report(const cag::EvalReport& r) {
  std::printf("%-12s mIoU %6.2f  pixel acc %6.2f\n", r.name.c_str(), r.iou.miou * 100.0,
              r.pixel_accuracy * 100.0);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Category-anchor guided domain adaptation on synthetic grids"};
  app.require_subcommand(1);

  Common gen_opts, run_opts, ablate_opts;
  auto* gen = app.add_subcommand("generate", "write source / target-train / target-eval datasets");
  add_common(gen, gen_opts);

  auto* run = app.add_subcommand("run", "pretrain, warm up and run the adaptation stages");
  add_common(run, run_opts);
  std::string stage_resume;
  run->add_option("--stage-resume", stage_resume, "resume from a stage snapshot")
      ->check(CLI::ExistingFile);

  auto* ablate = app.add_subcommand("ablate", "run each loss-term variant from one warmed model");
  add_common(ablate, ablate_opts);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a labeled dataset");
  std::string checkpoint, dataset, eval_out;
  eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval->add_option("--dataset", dataset, "labeled dataset")->required();
  eval->add_option("--out", eval_out, "directory for report.json / report.tsv");

  CLI11_PARSE(app, argc, argv);

  try {
    std::filesystem::path out;
    if (*gen) {
      const auto cfg = load(gen_opts, out);
      for (const auto& p : cag::cmd_generate(cfg, out)) std::printf("wrote %s\n", p.c_str());
    } else if (*run) {
      const auto cfg = load(run_opts, out);
      std::optional<std::filesystem::path> resume;
      if (!stage_resume.empty()) resume = stage_resume;
      const auto r = cag::cmd_run(cfg, out, resume);
      if (r.source_only) print_report(*r.source_only);
      if (r.warmup) print_report(*r.warmup);
      if (r.reliability) {
        const auto& a = *r.reliability;
        std::printf("pseudo-labels at coverage %.3f: probability precision %.3f, anchor precision %.3f\n",
                    a.prob.coverage, a.prob.precision.value_or(0.0), a.matched.precision.value_or(0.0));
      }
      for (const auto& s : r.stages) {
        print_report(s.report);
        std::printf("%12s anchor active %.3f precision %.3f | prob active %.3f precision %.3f\n", "",
                    s.anchor_audit.coverage, s.anchor_audit.precision.value_or(0.0),
                    s.prob_audit.coverage, s.prob_audit.precision.value_or(0.0));
      }
      print_report(r.final_report);
    } else if (*ablate) {
      const auto cfg = load(ablate_opts, out);
      const auto r = cag::cmd_ablate(cfg, out);
      std::printf("warmup mIoU %.2f\n%s", r.warmup_miou * 100.0, cag::ablation_table(r).c_str());
    } else if (*eval) {
      const auto r = cag::cmd_eval(checkpoint, dataset, eval_out);
      std::fputs(cag::report_table(r).c_str(), stdout);
    }
  } catch (const cag::ParseError& e) {
    std::cerr << "error: " << e.what() << " (byte offset " << e.offset() << ")\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
