// sohpulse: state-of-health estimation from end-of-charge discharge pulses.
//
//   sohpulse simulate --out campaign --seed 1
//   sohpulse fit campaign/traces --out params.csv
//   sohpulse pipeline --params params.csv --cycles campaign/cycles.csv --out features.csv
//   sohpulse train --features features.csv --train-ids 3,4 --model model.json
//   sohpulse eval --features features.csv --model model.json --test-ids 1,2 --report report.csv

#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sohpulse/commands.hpp"
#include "sohpulse/error.hpp"

namespace {

using namespace sohpulse;

std::set<BatteryId> to_set(const std::vector<BatteryId>& ids) { return {ids.begin(), ids.end()}; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Battery state-of-health estimation from discharge pulse responses"};
    app.require_subcommand(1);

    // fit
    cli::FitConfig fit;
    auto* fit_cmd = app.add_subcommand("fit", "Identify ECM parameters from pulse-trace CSV files");
    fit_cmd->add_option("inputs", fit.inputs, "Trace files b<battery>_c<cycle>.csv, or directories of them");
    fit_cmd->add_option("-o,--out", fit.output, "Params CSV to write")->required();
    fit_cmd->add_option("--t-min", fit.options.window.t_min, "Fit window start [s]")->capture_default_str();
    fit_cmd->add_option("--t-max", fit.options.window.t_max, "Fit window end [s]")->capture_default_str();
    fit_cmd->add_option("--max-iterations", fit.options.max_iterations)->capture_default_str();
    fit_cmd->add_option("--cost-tolerance", fit.options.cost_tolerance)->capture_default_str();
    fit_cmd->add_option("--param-tolerance", fit.options.param_tolerance)->capture_default_str();
    fit_cmd->add_option("--initial-damping", fit.options.initial_damping)->capture_default_str();
    fit_cmd->add_option("-j,--jobs", fit.jobs, "Traces fitted concurrently")->capture_default_str();

    // pipeline
    cli::PipelineConfig pipe;
    std::string reference = "max";
    auto* pipe_cmd = app.add_subcommand("pipeline", "Label, correct, trim and smooth fitted parameters");
    pipe_cmd->add_option("--params", pipe.params, "Params CSV from `fit`")->required();
    pipe_cmd->add_option("--cycles", pipe.cycles, "Cycles CSV (battery_id,cycle_index,discharged_ah)")->required();
    pipe_cmd->add_option("--corrections", pipe.corrections, "Corrections CSV (battery_id,cycle_from,cycle_to,delta_ah)");
    pipe_cmd->add_option("--window", pipe.window, "Sliding-mean window [cycles]")->capture_default_str();
    pipe_cmd->add_option("--reference", reference, "SoH reference: 'max' (per battery) or a capacity in Ah")
        ->capture_default_str();
    pipe_cmd->add_option("-o,--out", pipe.output, "Features CSV to write")->required();

    // train
    cli::TrainConfig tr;
    std::vector<BatteryId> train_ids;
    std::string train_kind = "ols";
    auto* train_cmd = app.add_subcommand("train", "Fit a SoH regressor on selected batteries");
    train_cmd->add_option("--features", tr.features)->required();
    train_cmd->add_option("--train-ids", train_ids, "Training battery ids")->delimiter(',')->required();
    train_cmd->add_option("--kind", train_kind, "ols | huber | theil_sen")
        ->check(CLI::IsMember({"ols", "huber", "theil_sen"}))
        ->capture_default_str();
    train_cmd->add_option("--seed", tr.seed, "Subset sampling seed (theil_sen)")->capture_default_str();
    train_cmd->add_option("--model", tr.model, "Model JSON to write")->required();

    // eval
    cli::EvalConfig ev;
    std::vector<BatteryId> test_ids;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a trained model on held-out batteries");
    eval_cmd->add_option("--features", ev.features)->required();
    eval_cmd->add_option("--model", ev.model)->required();
    eval_cmd->add_option("--test-ids", test_ids, "Test battery ids")->delimiter(',')->required();
    eval_cmd->add_option("--report", ev.report, "Per-battery report CSV to write")->required();
    eval_cmd->add_option("--residuals", ev.residuals, "Per-cycle residuals CSV to write");

    // simulate
    cli::SimulateConfig sim;
    auto* sim_cmd = app.add_subcommand("simulate", "Generate a synthetic aging campaign");
    sim_cmd->add_option("--spec", sim.spec, "Battery spec JSON (default: 4-battery reference campaign)");
    sim_cmd->add_option("--profile", sim.profile, "Drift profile JSON (default: built-in profile)");
    sim_cmd->add_option("--seed", sim.seed)->capture_default_str();
    sim_cmd->add_option("-o,--out", sim.out_dir, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*fit_cmd) return cli::cmd_fit(fit, std::cout, std::cerr);
        if (*pipe_cmd) {
            if (reference != "max") {
                std::size_t used = 0;
                pipe.reference = std::stod(reference, &used);
                if (used != reference.size()) throw std::invalid_argument(reference);
            }
            return cli::cmd_pipeline(pipe, std::cout, std::cerr);
        }
        if (*train_cmd) {
            tr.train_ids = to_set(train_ids);
            tr.kind = estimator_kind_from_string(train_kind);
            return cli::cmd_train(tr, std::cout, std::cerr);
        }
        if (*eval_cmd) {
            ev.test_ids = to_set(test_ids);
            return cli::cmd_eval(ev, std::cout, std::cerr);
        }
        if (*sim_cmd) return cli::cmd_simulate(sim, std::cout, std::cerr);
    } catch (const std::invalid_argument&) {
        std::cerr << "usage error: --reference must be 'max' or a capacity in Ah\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
