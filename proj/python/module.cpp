#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cli.hpp"
#include "idistill/classifier.hpp"
#include "idistill/losses.hpp"
#include "idistill/metrics.hpp"
#include "idistill/synthgen.hpp"

namespace py = pybind11;
using namespace idistill;

namespace {

LatentVector to_latent(const std::vector<double>& v) {
  return Eigen::Map<const LatentVector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

ScoreSet to_scores(const std::vector<double>& bonafide, const std::vector<double>& attack) {
  return ScoreSet{bonafide, attack};
}

}  // namespace

PYBIND11_MODULE(_idistill, m) {
  m.doc() = "Identity-disentangled morphing attack detection";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("fuse", &fuse, py::arg("id_1"), py::arg("id_2"), "Bonafide score 1 - id_1 * id_2.");
  m.def(
      "identity_score",
      [](const std::vector<double>& w, const std::vector<double>& v) { return identity_score(to_latent(w), to_latent(v)); },
      py::arg("weights"), py::arg("v"));
  m.def(
      "cosine_similarity",
      [](const std::vector<double>& a, const std::vector<double>& b) { return cosine_similarity(to_latent(a), to_latent(b)); },
      py::arg("a"), py::arg("b"));
  m.def("bce_loss", &bce_loss, py::arg("y"), py::arg("y_hat"));

  m.def(
      "compute_eer",
      [](const std::vector<double>& bonafide, const std::vector<double>& attack, bool interpolated) {
        const EerResult r =
            compute_eer(to_scores(bonafide, attack), interpolated ? EerMode::kInterpolated : EerMode::kDiscrete);
        return py::make_tuple(r.eer, r.threshold);
      },
      py::arg("bonafide"), py::arg("attack"), py::arg("interpolated") = true,
      "Returns (eer, threshold). Scores >= threshold count as bonafide.");
  m.def(
      "bpcer_at_apcer",
      [](const std::vector<double>& bonafide, const std::vector<double>& attack, double target) {
        return bpcer_at_apcer(to_scores(bonafide, attack), target);
      },
      py::arg("bonafide"), py::arg("attack"), py::arg("target_apcer"));

  m.def(
      "generate_dataset",
      [](const std::filesystem::path& out_dir, int n_identities, int images_per_identity, int n_morphs, double alpha,
         int side, std::uint64_t seed) {
        GenConfig cfg;
        cfg.n_identities = n_identities;
        cfg.images_per_identity = images_per_identity;
        cfg.n_morphs = n_morphs;
        cfg.alpha = alpha;
        cfg.side = side;
        cfg.seed = seed;
        return generate_dataset(cfg, out_dir);
      },
      py::arg("out_dir"), py::arg("n_identities") = 30, py::arg("images_per_identity") = 3, py::arg("n_morphs") = 40,
      py::arg("alpha") = 0.5, py::arg("side") = kDefaultSide, py::arg("seed") = 0,
      "Writes a synthetic dataset and returns the manifest path.");

  py::class_<MorphClassifier>(m, "MorphClassifier")
      .def_static("load", &MorphClassifier::load, py::arg("path"))
      .def("parameter_hash", &MorphClassifier::parameter_hash)
      .def(
          "score_image",
          [](const MorphClassifier& model, const std::filesystem::path& image) {
            const auto& cfg = model.config();
            const ScoreTriple t = model.predict(load_image(image, cfg.side, cfg.channels));
            return py::make_tuple(t.id_1, t.id_2, t.bonafide_score);
          },
          py::arg("image"), "Returns (id_1, id_2, bonafide_score) for one PNG.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> full = {"idistill"};
        full.insert(full.end(), args.begin(), args.end());
        std::vector<const char*> argv;
        for (const auto& a : full) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs an idistill subcommand in process; returns (exit_code, stdout, stderr).");
}
