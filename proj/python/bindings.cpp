#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "style_mixer/config.hpp"
#include "style_mixer/encoder.hpp"
#include "style_mixer/image.hpp"
#include "style_mixer/losses.hpp"
#include "style_mixer/model.hpp"
#include "style_mixer/patch_attention.hpp"
#include "style_mixer/pipeline.hpp"
#include "style_mixer/style_fusion.hpp"
#include "style_mixer/training.hpp"

namespace py = pybind11;
using namespace style_mixer;

namespace {

template <typename T>
using CArray = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
torch::Tensor from_numpy(const CArray<T>& a) {
    std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
    return torch::from_blob(const_cast<T*>(a.data()), shape, c10::CppTypeToScalarType<T>::value).clone();
}

template <typename T>
py::array_t<T> to_numpy(const torch::Tensor& t) {
    auto c = t.detach().to(c10::CppTypeToScalarType<T>::value).contiguous();
    py::array_t<T> out(std::vector<py::ssize_t>(c.sizes().begin(), c.sizes().end()));
    std::memcpy(out.mutable_data(), c.template data_ptr<T>(), sizeof(T) * static_cast<std::size_t>(c.numel()));
    return out;
}

// Python images are H x W x 3 float32 arrays in [0, 1].
torch::Tensor image_in(const CArray<float>& a) {
    if (a.ndim() != 3 || a.shape(2) != 3) throw ShapeError("expected an H x W x 3 image array");
    return from_numpy(a).permute({2, 0, 1}).contiguous();
}

py::array_t<float> image_out(const torch::Tensor& t) { return to_numpy<float>(t.permute({1, 2, 0})); }

// Feature maps are C x H x W; the library wants a leading batch dim.
torch::Tensor features_in(const CArray<double>& a) {
    if (a.ndim() != 3) throw ShapeError("expected a C x H x W feature array");
    return from_numpy(a).unsqueeze(0);
}

RegionLabeling labeling_from(const CArray<int64_t>& labels, int64_t k) {
    if (labels.ndim() != 2) throw ShapeError("expected an H x W label array");
    RegionLabeling r;
    r.labels = from_numpy(labels);
    r.k = k;
    return r;
}

std::vector<torch::Tensor> maps_in(const std::vector<CArray<double>>& arrays) {
    std::vector<torch::Tensor> out;
    for (const auto& a : arrays) out.push_back(from_numpy(a));
    return out;
}

std::string hex(uint64_t v) {
    std::ostringstream os;
    os << std::hex << v;
    return os.str();
}

KeyValueConfig config_from(const py::object& source, const py::dict& overrides) {
    KeyValueConfig kv;
    if (py::isinstance<py::dict>(source)) {
        for (auto item : source.cast<py::dict>()) kv.set(py::str(item.first), py::str(item.second));
    } else if (!source.is_none()) {
        kv = KeyValueConfig::load(source.cast<std::filesystem::path>());
    }
    for (auto item : overrides) kv.set(py::str(item.first), py::str(item.second));
    return kv;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Multi-style transfer with patch attention and region-based style fusion.";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<NonFiniteError>(m, "NonFiniteError", base.ptr());

    py::class_<VggEncoder>(m, "Encoder")
        .def_static("load", &load_encoder, py::arg("path"))
        .def_static("random", &random_encoder, py::arg("seed") = 0, "He-initialized stand-in weights.")
        .def("save", [](VggEncoder& e, const std::filesystem::path& p) { save_encoder(p, e); }, py::arg("path"))
        .def_property_readonly("checksum", [](VggEncoder& e) { return hex(parameter_checksum(*e)); });

    py::class_<StyleMixer>(m, "Model")
        .def_static(
            "create",
            [](VggEncoder encoder, uint64_t seed, int64_t patch_size, const std::string& mff_layers) {
                ModelConfig cfg;
                cfg.pa.patch_size = patch_size;
                cfg.mff.layers = parse_layer_list(mff_layers);
                return make_model(cfg, std::move(encoder), seed);
            },
            py::arg("encoder"), py::arg("seed") = 0, py::arg("patch_size") = 3,
            py::arg("mff_layers") = "relu3_1,relu4_1,relu5_1")
        .def_static("load", &load_checkpoint, py::arg("path"), py::arg("encoder"))
        .def("save", [](StyleMixer& model, const std::filesystem::path& p) { save_checkpoint(p, model); },
             py::arg("path"))
        .def_property_readonly("patch_size", [](StyleMixer& model) { return model->config().pa.patch_size; })
        .def_property_readonly("mff_layers",
                               [](StyleMixer& model) { return format_layer_list(model->config().mff.layers); })
        .def(
            "sst",
            [](StyleMixer& model, const CArray<float>& content, const CArray<float>& style) {
                auto c = image_in(content), s = image_in(style);
                torch::Tensor out;
                {
                    py::gil_scoped_release release;
                    out = run_sst(model, c, s);
                }
                return image_out(out);
            },
            py::arg("content"), py::arg("style"))
        .def(
            "mst",
            [](StyleMixer& model, const CArray<float>& content, const std::vector<CArray<float>>& styles,
               const std::string& strategy, int64_t k, uint64_t seed, double pos_weight) {
                MstOptions opts;
                opts.strategy = parse_strategy(strategy);
                opts.kmeans.k = k;
                opts.kmeans.seed = seed;
                opts.kmeans.pos_weight = pos_weight;
                auto c = image_in(content);
                std::vector<torch::Tensor> s;
                for (const auto& a : styles) s.push_back(image_in(a));
                MstResult r;
                {
                    py::gil_scoped_release release;
                    r = run_mst(model, c, s, opts);
                }
                py::dict out;
                out["image"] = image_out(r.image);
                out["style_map"] = to_numpy<int64_t>(r.style_map);
                py::list confs;
                for (const auto& t : r.confidences) confs.append(to_numpy<double>(t));
                out["confidences"] = confs;
                if (r.regions) out["labels"] = to_numpy<int64_t>(r.regions->labels);
                if (r.assignment) out["region_to_style"] = r.assignment->region_to_style;
                return out;
            },
            py::arg("content"), py::arg("styles"), py::arg("strategy") = "region", py::arg("k") = 6,
            py::arg("seed") = 0, py::arg("pos_weight") = 1.0);

    m.def("load_image", [](const std::filesystem::path& p) { return image_out(load_image(p)); }, py::arg("path"));
    m.def("save_png", [](const std::filesystem::path& p, const CArray<float>& img) { save_png(p, image_in(img)); },
          py::arg("path"), py::arg("image"));
    m.def("psnr", [](const CArray<float>& a, const CArray<float>& b) { return psnr(from_numpy(a), from_numpy(b)); },
          py::arg("a"), py::arg("b"));

    m.def(
        "unfold_patches",
        [](const CArray<double>& f, int64_t p) { return to_numpy<double>(unfold_patches(features_in(f), p)[0]); },
        py::arg("features"), py::arg("patch_size"), "(H*W) x (C*p*p) zero-padded patch matrix.");
    m.def(
        "confidence",
        [](const CArray<double>& s, const CArray<double>& a) {
            return to_numpy<double>(confidence(from_numpy(s), from_numpy(a)));
        },
        py::arg("scores"), py::arg("attention"));
    m.def(
        "contextual_loss",
        [](const CArray<double>& x, const CArray<double>& y, double bandwidth, double eps) {
            return contextual_loss_layer(features_in(x), features_in(y), bandwidth, eps).item<double>();
        },
        py::arg("x"), py::arg("y"), py::arg("bandwidth") = 0.1, py::arg("eps") = 1e-5);
    m.def(
        "cluster",
        [](const CArray<double>& f, int64_t k, uint64_t seed, double pos_weight, int max_iterations) {
            KMeansOptions opts{.k = k, .pos_weight = pos_weight, .seed = seed, .max_iterations = max_iterations};
            auto r = cluster_content(from_numpy(f), opts);
            py::dict out;
            out["labels"] = to_numpy<int64_t>(r.labels);
            out["inertia_history"] = r.inertia_history;
            out["iterations"] = r.iterations;
            return out;
        },
        py::arg("features"), py::arg("k"), py::arg("seed") = 0, py::arg("pos_weight") = 1.0,
        py::arg("max_iterations") = 100);
    m.def(
        "assign_styles",
        [](const CArray<int64_t>& labels, int64_t k, const std::vector<CArray<double>>& confs) {
            return assign_styles(labeling_from(labels, k), maps_in(confs)).region_to_style;
        },
        py::arg("labels"), py::arg("k"), py::arg("confidences"));
    m.def(
        "assign_styles_discrete",
        [](const std::vector<CArray<double>>& confs) { return to_numpy<int64_t>(assign_styles_discrete(maps_in(confs))); },
        py::arg("confidences"));

    m.def(
        "train",
        [](const py::object& config, const py::kwargs& overrides) {
            const auto kv = config_from(config, overrides);
            const auto cfg = train_config_from(kv);
            const auto loss_cfg = loss_config_from(kv);
            py::gil_scoped_release release;
            return train(cfg, loss_cfg);
        },
        py::arg("config") = py::none(),
        "Runs training from a config file path or dict; keyword arguments override keys. Returns the last "
        "checkpoint path.");
}
