#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gabornet/cli.hpp"

namespace cli = gabornet::cli;

int main(int argc, char** argv) {
    CLI::App app{"Synthetic Gabor holography: dataset generation, UNet training, reconstruction"};
    app.require_subcommand(1);

    cli::GenOptions gen;
    std::size_t gen_nmax = 0;
    auto* g = app.add_subcommand("gen", "Generate a synthetic (A, I, H) dataset");
    g->add_option("--m", gen.m, "Number of triplets")->required()->check(CLI::PositiveNumber);
    g->add_option("--n", gen.n, "Image side in pixels (power of two)")->required();
    g->add_option("--lambda", gen.wavelength, "Wavelength [m]")->capture_default_str();
    g->add_option("--pitch", gen.pitch, "Pixel pitch [m]")->capture_default_str();
    g->add_option("--z", gen.z, "Reconstruction distance [m]")->capture_default_str();
    g->add_option("--nmin", gen.nmin, "Fewest source points")->capture_default_str();
    auto* nmax_opt = g->add_option("--nmax", gen_nmax, "Most source points (default n*n/10)");
    g->add_option("--valfrac", gen.valfrac, "Validation fraction")->capture_default_str();
    g->add_option("--seed", gen.seed, "Master seed")->capture_default_str();
    g->add_option("--jobs", gen.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
    g->add_option("--out", gen.out, "Output directory")->required();

    cli::TrainOptions tr;
    auto* t = app.add_subcommand("train", "Train the UNet on a generated dataset");
    t->add_option("--data", tr.data, "Dataset directory")->required();
    t->add_option("--size", tr.size, "Network input size (must equal the dataset image side)")->required();
    t->add_option("--depth", tr.depth, "Down/up sampling blocks")->required();
    t->add_option("--base", tr.base, "Channels after the first convolution")->capture_default_str();
    t->add_option("--epochs", tr.epochs, "Epochs")->capture_default_str();
    t->add_option("--lr", tr.lr, "SGD learning rate")->capture_default_str();
    t->add_option("--batch", tr.batch, "Batch size")->capture_default_str();
    t->add_option("--target", tr.target, "hologram (I->H) or generating (I->A)")
        ->capture_default_str()
        ->check(CLI::IsMember({"hologram", "generating"}));
    t->add_option("--seed", tr.seed, "Initialization and shuffle seed")->capture_default_str();
    t->add_option("--ckpt-every", tr.ckpt_every, "Checkpoint period in epochs (0: final only)")->capture_default_str();
    t->add_option("--out", tr.out, "Output directory")->required();
    t->add_flag("--f32", tr.single_precision, "Train in 32-bit floats");

    cli::ReconstructOptions rc;
    auto* r = app.add_subcommand("reconstruct", "Classical magnitude hologram |propagate(I, +z)|");
    r->add_option("--in", rc.in, "Input interferogram (PGM)")->required();
    r->add_option("--out", rc.out, "Output hologram (16-bit PGM)")->required();
    r->add_option("--lambda", rc.wavelength, "Wavelength [m]")->capture_default_str();
    r->add_option("--pitch", rc.pitch, "Pixel pitch [m]")->capture_default_str();
    r->add_option("--z", rc.z, "Reconstruction distance [m], > 0")->capture_default_str();

    cli::PredictOptions pr;
    auto* p = app.add_subcommand("predict", "Network estimate of the hologram");
    p->add_option("--ckpt", pr.ckpt, "Checkpoint file")->required();
    p->add_option("--in", pr.in, "Input interferogram (PGM)")->required();
    p->add_option("--out", pr.out, "Output image (16-bit PGM)")->required();

    cli::EvalOptions ev;
    std::string eval_out;
    auto* e = app.add_subcommand("eval", "Compare two images");
    e->add_option("--a", ev.a, "First image (PGM)")->required();
    e->add_option("--b", ev.b, "Second image (PGM)")->required();
    auto* eval_out_opt = e->add_option("--out", eval_out, "Optional CSV report");

    CLI11_PARSE(app, argc, argv);

    if (r->parsed() && !(rc.z > 0.0)) {
        std::cerr << "usage error: reconstruct --z must be > 0\n";
        return 2;
    }

    try {
        if (g->parsed()) {
            if (nmax_opt->count() > 0) gen.nmax = gen_nmax;
            return cli::cmd_gen(gen, std::cout);
        }
        if (t->parsed()) return cli::cmd_train(tr, std::cout);
        if (r->parsed()) return cli::cmd_reconstruct(rc);
        if (p->parsed()) return cli::cmd_predict(pr);
        if (e->parsed()) {
            if (eval_out_opt->count() > 0) ev.out = eval_out;
            return cli::cmd_eval(ev, std::cout);
        }
    } catch (const gabornet::ParameterError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 2;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 1;
}
