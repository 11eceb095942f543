#include <cmath>
#include <sstream>

#include "cmp/harness.hpp"
#include "cmp/prior_store.hpp"
#include "cmp/rng.hpp"
#include "doctest.h"

using namespace cmp;

namespace {

PriorModel small_model(std::uint64_t seed = 1, std::uint64_t t = 1ull << 8,
                       std::size_t out_dim = 16) {
    HashGridConfig cfg;
    cfg.table_capacity = t;
    cfg.feature_dim = 4;
    Rng rng(seed);
    return PriorModel::create(cfg, {0.0, 0.0, 200.0, 200.0}, rng, out_dim);
}

Tensor grid_in_coverage(std::size_t h, std::size_t w) {
    Tensor g({h, w, 2});
    Rng rng(50);
    for (std::size_t i = 0; i < h * w; ++i) {
        g.data[2 * i] = rng.uniform(1.0, 199.0);
        g.data[2 * i + 1] = rng.uniform(1.0, 199.0);
    }
    return g;
}

std::string store_bytes(const BinaryPriorStore& store) {
    std::ostringstream out(std::ios::binary);
    save(store, out);
    return out.str();
}

}  // namespace

TEST_CASE("prior_features: output shape (h, w, out_dim)") {
    const PriorModel model = small_model();
    const Tensor g = grid_in_coverage(5, 7);
    const Tensor feats = prior_features(model, g, true);
    CHECK(feats.shape == std::vector<std::size_t>{5, 7, 16});
    CHECK(feats.all_finite());
}

TEST_CASE("prior_features: all-positive tables give a constant feature map") {
    PriorModel model = small_model(2);
    for (auto& table : model.grid.tables)
        for (double& v : table) v = std::abs(v) + 1e-6;  // sign is +1 everywhere

    // Bilinear weights sum to 1 only within 1e-12, so constancy is approximate.
    const Tensor feats = prior_features(model, grid_in_coverage(4, 4), true);
    const std::size_t out = model.mlp.out_dim();
    for (std::size_t i = 1; i < 16; ++i)
        for (std::size_t c = 0; c < out; ++c)
            CHECK(feats.data[i * out + c] == doctest::Approx(feats.data[c]).epsilon(1e-9));
}

TEST_CASE("prior_features: out-of-coverage policy") {
    const PriorModel model = small_model(3);
    Tensor g({1, 2, 2});
    g.data = {50.0, 50.0, 500.0, 500.0};  // second point outside

    SUBCASE("default zero substitution, with in-coverage points untouched") {
        const Tensor feats = prior_features(model, g, true);
        double norm = 0.0;
        for (std::size_t c = 0; c < 16; ++c) {
            norm += std::abs(feats.at(0, 0, c));
            CHECK(feats.at(0, 1, c) == 0.0);
        }
        CHECK(norm > 0.0);
    }
    SUBCASE("error policy throws") {
        CHECK_THROWS_AS(prior_features(model, g, true, CoveragePolicy::kError),
                        OutOfCoverageError);
    }
}

TEST_CASE("freeze: frozen query equals the live binarized query element-exactly") {
    const PriorModel model = small_model(4);
    const BinaryPriorStore store = freeze(model);
    const Tensor g = grid_in_coverage(6, 6);
    const Tensor live = prior_features(model, g, true);
    const Tensor frozen = prior_features(store, g);
    REQUIRE(live.shape == frozen.shape);
    for (std::size_t i = 0; i < live.numel(); ++i) CHECK(live.data[i] == frozen.data[i]);
}

TEST_CASE("freeze: deterministic bytes") {
    const PriorModel model = small_model(5);
    CHECK(store_bytes(freeze(model)) == store_bytes(freeze(model)));
}

TEST_CASE("freeze: rejects non-finite parameters") {
    PriorModel model = small_model(6);
    model.mlp.l2.w.data[0] = std::nan("");
    CHECK_THROWS_AS(freeze(model), ConfigError);
}

TEST_CASE("save/load: byte-identical round trip") {
    const PriorModel model = small_model(7);
    Tensor extra({3});
    extra.data = {1.0f, 2.5f, -3.0f};
    const BinaryPriorStore store = freeze(model, {&extra});

    const std::string bytes = store_bytes(store);
    std::istringstream in(bytes, std::ios::binary);
    const BinaryPriorStore loaded = load(in);
    CHECK(store_bytes(loaded) == bytes);

    // And the loaded store answers queries identically.
    const Tensor g = grid_in_coverage(3, 3);
    const Tensor a = prior_features(store, g);
    const Tensor b = prior_features(loaded, g);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data[i] == b.data[i]);
}

TEST_CASE("load: distinct errors for magic, version and truncation") {
    const PriorModel model = small_model(8);
    std::string bytes = store_bytes(freeze(model));

    SUBCASE("corrupted magic") {
        std::string bad = bytes;
        bad[0] = 'X';
        std::istringstream in(bad, std::ios::binary);
        CHECK_THROWS_AS(load(in), BadMagicError);
    }
    SUBCASE("unsupported version") {
        std::string bad = bytes;
        bad[4] = static_cast<char>(99);
        std::istringstream in(bad, std::ios::binary);
        CHECK_THROWS_AS(load(in), VersionError);
    }
    SUBCASE("truncated header") {
        std::istringstream in(bytes.substr(0, 20), std::ios::binary);
        CHECK_THROWS_AS(load(in), TruncatedError);
    }
    SUBCASE("truncated table section") {
        std::istringstream in(bytes.substr(0, 120), std::ios::binary);
        CHECK_THROWS_AS(load(in), FormatError);
    }
}

TEST_CASE("save: header and section arithmetic match the layout") {
    const PriorModel model = small_model(9);
    const BinaryPriorStore store = freeze(model);
    const std::string bytes = store_bytes(store);

    // Header: magic(4) version(2) L(2) T(8) d(2) s_min(8) growth(8) cov(32).
    const std::size_t header = 4 + 2 + 2 + 8 + 2 + 8 + 8 + 32;
    CHECK(header == 66);
    const std::size_t levels = store.levels().size() * (8 + 1);
    std::size_t packed = 0;
    for (const auto& p : store.packed_tables()) packed += p.bits.size();
    const MemoryReport rep = memory_report(model.grid, true);
    CHECK(packed == rep.total_bytes);
    std::size_t mlp = 0;
    for (const Tensor* t : {&store.mlp().l1.w, &store.mlp().l1.b, &store.mlp().l2.w,
                            &store.mlp().l2.b, &store.mlp().l3.w, &store.mlp().l3.b})
        mlp += 8 + 4 * t->numel();
    const std::size_t extra = 8;  // empty extra section keeps its count field
    CHECK(bytes.size() == header + levels + packed + mlp + extra);
}

TEST_CASE("prior gradients: full encode->MLP chain passes grad_check") {
    PriorModel model = small_model(10, 1ull << 6, 8);
    // O(1) table entries keep pre-activations away from the ReLU kinks that
    // central differences cannot straddle.
    Rng table_rng(52);
    model.grid.init_tables(table_rng, 0.5);
    const Tensor g = grid_in_coverage(3, 3);
    Tensor probe({3, 3, 8});
    Rng rng(51);
    for (double& v : probe.data) v = rng.uniform(-1.0, 1.0);

    auto loss = [&]() {
        const Tensor y = prior_features(model, g, false);
        double acc = 0.0;
        for (std::size_t i = 0; i < y.numel(); ++i) acc += probe.data[i] * y.data[i];
        return acc;
    };

    PriorContext ctx;
    prior_features(model, g, false, CoveragePolicy::kZero, &ctx);
    PriorGrads grads = PriorGrads::zeros_like(model);
    prior_features_backward(probe, model, ctx, grads);

    // Wrap the table vectors as tensors for the checker.
    std::vector<Tensor> table_tensors(model.grid.tables.size());
    std::vector<Tensor> table_grads(model.grid.tables.size());
    std::vector<Tensor*> params{&model.mlp.l1.w, &model.mlp.l1.b, &model.mlp.l2.w,
                                &model.mlp.l2.b, &model.mlp.l3.w, &model.mlp.l3.b};
    std::vector<const Tensor*> analytic{&grads.mlp.l1.w, &grads.mlp.l1.b, &grads.mlp.l2.w,
                                        &grads.mlp.l2.b, &grads.mlp.l3.w, &grads.mlp.l3.b};

    auto loss_tables = [&]() {
        for (std::size_t l = 0; l < table_tensors.size(); ++l)
            model.grid.tables[l] = table_tensors[l].data;
        return loss();
    };
    for (std::size_t l = 0; l < model.grid.tables.size(); ++l) {
        table_tensors[l] = Tensor({model.grid.tables[l].size()});
        table_tensors[l].data = model.grid.tables[l];
        table_grads[l] = Tensor({grads.tables[l].size()});
        table_grads[l].data = grads.tables[l];
    }

    CHECK(grad_check(loss, params, analytic, 1e-5) <= 1e-4);

    std::vector<Tensor*> tp;
    std::vector<const Tensor*> tg;
    for (std::size_t l = 0; l < table_tensors.size(); ++l) {
        tp.push_back(&table_tensors[l]);
        tg.push_back(&table_grads[l]);
    }
    CHECK(grad_check(loss_tables, tp, tg, 1e-5) <= 1e-4);
}

TEST_CASE("full chain with cross-entropy passes grad_check") {
    PriorModel model = small_model(11, 1ull << 6, 8);
    Rng table_rng(53);
    model.grid.init_tables(table_rng, 0.5);
    ProbeWeights head = ProbeWeights::create(8, 6, 3);
    Rng hrng(54);
    head.init(hrng);

    const Tensor g = grid_in_coverage(2, 3);
    const std::vector<int> labels{0, 1, 2, 0, 1, 2};
    const std::vector<double> cw{1.0, 2.0, 0.5};

    auto forward_loss = [&](Tensor* dlogits, MlpContext* mctx, PriorContext* pctx,
                            Tensor* feats_out) {
        PriorContext local_p;
        PriorContext& pc = pctx ? *pctx : local_p;
        Tensor feats = prior_features(model, g, false, CoveragePolicy::kZero, &pc);
        Tensor flat({6, 8});
        flat.data = feats.data;
        MlpContext local_m;
        (void)local_m;
        Tensor a1({6, head.l1.out_dim()});
        dense_forward(flat.data.data(), 6, 8, head.l1, a1.data.data());
        relu_inplace(a1.data.data(), a1.numel());
        Tensor logits({6, 3});
        dense_forward(a1.data.data(), 6, head.l1.out_dim(), head.l2, logits.data.data());
        if (feats_out) *feats_out = a1;
        (void)mctx;
        return weighted_cross_entropy(logits, labels, cw, dlogits);
    };
    auto loss = [&]() { return forward_loss(nullptr, nullptr, nullptr, nullptr); };

    // Analytic gradients via the library backward passes.
    PriorContext pctx;
    Tensor feats = prior_features(model, g, false, CoveragePolicy::kZero, &pctx);
    Tensor flat({6, 8});
    flat.data = feats.data;
    Tensor a1({6, head.l1.out_dim()});
    dense_forward(flat.data.data(), 6, 8, head.l1, a1.data.data());
    relu_inplace(a1.data.data(), a1.numel());
    Tensor logits({6, 3});
    dense_forward(a1.data.data(), 6, head.l1.out_dim(), head.l2, logits.data.data());
    Tensor dlogits;
    weighted_cross_entropy(logits, labels, cw, &dlogits);

    DenseLayer g2 = DenseLayer::create(3, head.l1.out_dim());
    Tensor d_a1({6, head.l1.out_dim()});
    dense_backward(a1.data.data(), dlogits.data.data(), 6, head.l2, g2, d_a1.data.data());
    for (std::size_t i = 0; i < d_a1.numel(); ++i)
        if (a1.data[i] <= 0.0) d_a1.data[i] = 0.0;
    DenseLayer g1 = DenseLayer::create(head.l1.out_dim(), 8);
    Tensor d_flat({6, 8});
    dense_backward(flat.data.data(), d_a1.data.data(), 6, head.l1, g1, d_flat.data.data());
    Tensor d_feats({2, 3, 8});
    d_feats.data = d_flat.data;
    PriorGrads grads = PriorGrads::zeros_like(model);
    prior_features_backward(d_feats, model, pctx, grads);

    std::vector<Tensor> tables(model.grid.tables.size()), tgrads(model.grid.tables.size());
    for (std::size_t l = 0; l < tables.size(); ++l) {
        tables[l] = Tensor({model.grid.tables[l].size()});
        tables[l].data = model.grid.tables[l];
        tgrads[l] = Tensor({grads.tables[l].size()});
        tgrads[l].data = grads.tables[l];
    }
    auto loss_sync = [&]() {
        for (std::size_t l = 0; l < tables.size(); ++l) model.grid.tables[l] = tables[l].data;
        return loss();
    };
    std::vector<Tensor*> tp;
    std::vector<const Tensor*> tg;
    for (std::size_t l = 0; l < tables.size(); ++l) {
        tp.push_back(&tables[l]);
        tg.push_back(&tgrads[l]);
    }
    CHECK(grad_check(loss_sync, tp, tg, 1e-5) <= 1e-4);
    CHECK(grad_check(loss, {&model.mlp.l2.w, &head.l1.w, &head.l2.b},
                     {&grads.mlp.l2.w, &g1.w, &g2.b}, 1e-5) <= 1e-4);
}
