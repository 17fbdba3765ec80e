#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

using namespace mac;

namespace {

using Model = DeviceModel<double>;

Model model_for(const oracle::World& w, std::size_t dim, std::uint64_t seed = 1, unsigned owner = 0) {
    return Model(oracle::user(owner), dim, w.regions, w.all_regions(), w.num_categories, seed);
}

void set_row(std::span<double> row, std::initializer_list<double> v) { std::copy(v.begin(), v.end(), row.begin()); }

SoftDecisionBundle bundle(RefKind kind, unsigned owner, std::vector<std::vector<double>> decisions) {
    SoftDecisionBundle b;
    b.owner = oracle::user(owner);
    b.kind = kind;
    for (auto& p : decisions) {
        SoftDecision d;
        for (std::uint32_t k = 0; k < p.size(); ++k) d.support.push_back(k);
        d.probs = std::move(p);
        b.per_sequence.push_back(std::move(d));
    }
    return b;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double bilinear(const Model& m, std::size_t slot, CategoryId c) {
    const std::size_t d = m.dim();
    auto e = m.poi_row(slot);
    auto k = m.cat_row(c);
    auto W = m.mi_block();
    double s = 0;
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) s += e[i] * W[i * d + j] * k[j];
    }
    return s;
}

// 12 POIs in 2 regions, 3 categories; region 0 holds the even POIs.
struct Toy {
    oracle::World w = oracle::grid_world(12, 2, 3);
    GeoReferenceSet geo{oracle::region(0),
                        {RefSequence{oracle::pois({0, 2, 4}), oracle::cats({0, 2, 1})},
                         RefSequence{oracle::pois({6, 8}), oracle::cats({0, 2})}}};
    SemReferenceSet sem{{oracle::cats({0, 1, 2}), oracle::cats({2, 2}), oracle::cats({1})}};
};

}  // namespace

TEST(Bundle, OneDecisionPerReferenceSequence) {
    Toy t;
    auto m = model_for(t.w, 4);
    auto g = compute_bundle(m, t.geo, t.w.regions, 3);
    EXPECT_EQ(g.per_sequence.size(), t.geo.sequences.size());
    EXPECT_EQ(g.kind, RefKind::geo);
    EXPECT_EQ(g.region, oracle::region(0));
    EXPECT_EQ(g.round, 3u);
    for (const auto& d : g.per_sequence) EXPECT_EQ(d.support, canonical_support(t.w.regions.region(oracle::region(0))));
    auto s = compute_bundle(m, t.sem, 3);
    EXPECT_EQ(s.per_sequence.size(), 3u);
    for (const auto& d : s.per_sequence) {
        EXPECT_EQ(d.support, (std::vector<std::uint32_t>{0, 1, 2}));
        double z = 0;
        for (auto p : d.probs) z += p;
        EXPECT_NEAR(z, 1.0, 1e-12);
    }
}

TEST(Bundle, IdenticalModelsGiveIdenticalBundles) {
    Toy t;
    auto a = model_for(t.w, 8, 42, 0);
    auto b = model_for(t.w, 8, 42, 0);
    EXPECT_EQ(encode_bundle(compute_bundle(a, t.geo, t.w.regions, 1)),
              encode_bundle(compute_bundle(b, t.geo, t.w.regions, 1)));
    EXPECT_EQ(encode_bundle(compute_bundle(a, t.sem, 1)), encode_bundle(compute_bundle(b, t.sem, 1)));
}

TEST(Bundle, HandComputedTwoDimensional) {
    // same toy rows as the forward example, now over the whole region
    auto w = oracle::grid_world(4, 1, 1);
    auto m = model_for(w, 2);
    set_row(m.poi_row(0), {1, 0});
    set_row(m.poi_row(1), {0, 1});
    set_row(m.poi_row(2), {1, 1});
    set_row(m.poi_row(3), {2, -1});
    GeoReferenceSet refs{oracle::region(0), {RefSequence{oracle::pois({0, 1}), oracle::cats({0, 0})}}};
    auto b = compute_bundle(m, refs, w.regions, 0);
    ASSERT_EQ(b.per_sequence.size(), 1u);
    const auto& p = b.per_sequence[0].probs;
    EXPECT_NEAR(p[0], 0.17330598218982507, 1e-12);
    EXPECT_NEAR(p[1], 0.338600269195685, 1e-12);
    EXPECT_NEAR(p[2], 0.3993904421046476, 1e-12);
    EXPECT_NEAR(p[3], 0.08870330650984232, 1e-12);
}

TEST(Bundle, MissingRegionNamesIt) {
    auto w = oracle::grid_world(6, 2, 1);
    Model m(oracle::user(0), 2, w.regions, {oracle::region(0)}, 1, 1);
    GeoReferenceSet refs{oracle::region(1), {RefSequence{oracle::pois({1, 3}), oracle::cats({0, 0})}}};
    try {
        compute_bundle(m, refs, w.regions, 0);
        FAIL();
    } catch (const ModelError& e) {
        EXPECT_NE(std::string(e.what()).find("region 1"), std::string::npos);
    }
}

TEST(Bundle, WireRoundTrip) {
    Toy t;
    auto m = model_for(t.w, 4);
    for (auto b : {compute_bundle(m, t.geo, t.w.regions, 7), compute_bundle(m, t.sem, 7)}) {
        auto bytes = encode_bundle(b);
        EXPECT_EQ(bytes.size(), wire_size(b));
        auto back = decode_bundle(bytes, b.per_sequence[0].support);
        EXPECT_EQ(back.owner, b.owner);
        EXPECT_EQ(back.round, 7u);
        EXPECT_EQ(back.kind, b.kind);
        if (b.kind == RefKind::geo) {
            EXPECT_EQ(back.region, b.region);
        }
        ASSERT_EQ(back.per_sequence.size(), b.per_sequence.size());
        for (std::size_t s = 0; s < b.per_sequence.size(); ++s) {
            EXPECT_EQ(back.per_sequence[s].support, b.per_sequence[s].support);
            for (std::size_t k = 0; k < b.per_sequence[s].probs.size(); ++k) {
                EXPECT_EQ(back.per_sequence[s].probs[k], static_cast<float>(b.per_sequence[s].probs[k]));
            }
        }
        bytes.pop_back();
        EXPECT_THROW(decode_bundle(bytes, b.per_sequence[0].support), DataError);
    }
    auto g = compute_bundle(m, t.geo, t.w.regions, 0);
    EXPECT_EQ(wire_size(g), kBundleHeaderBytes + 4 * 2 * 6);
}

TEST(LossGeo, Examples) {
    auto own = bundle(RefKind::geo, 0, {{1, 0}});
    std::vector<SoftDecisionBundle> nb{bundle(RefKind::geo, 1, {{0, 1}})};
    EXPECT_DOUBLE_EQ(loss_geo(own, nb), 2.0);
    std::vector<SoftDecisionBundle> same{bundle(RefKind::geo, 1, {{1, 0}}), bundle(RefKind::geo, 2, {{1, 0}})};
    EXPECT_EQ(loss_geo(own, same), 0.0);
}

TEST(LossGeo, MeanInvariantUnderDoubling) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    auto rnd = [&](unsigned owner) { return bundle(RefKind::geo, owner, {{u(rng), u(rng), u(rng)}, {u(rng), u(rng), u(rng)}}); };
    auto own = rnd(0);
    std::vector<SoftDecisionBundle> nb{rnd(1), rnd(2), rnd(3)};
    auto doubled = nb;
    doubled.insert(doubled.end(), nb.begin(), nb.end());
    EXPECT_NEAR(loss_geo(own, nb), loss_geo(own, doubled), 1e-14);
}

TEST(LossGeo, SymmetricAndZeroOnlyWhenEqual) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 100; ++i) {
        auto a = bundle(RefKind::geo, 0, {{u(rng), u(rng)}, {u(rng), u(rng)}});
        auto b = bundle(RefKind::geo, 1, {{u(rng), u(rng)}, {u(rng), u(rng)}});
        std::vector<SoftDecisionBundle> nb_b{b}, nb_a{a};
        EXPECT_DOUBLE_EQ(loss_geo(a, nb_b), loss_geo(b, nb_a));
        EXPECT_GT(loss_geo(a, nb_b), 0.0);
        std::vector<SoftDecisionBundle> self{a};
        EXPECT_EQ(loss_geo(a, self), 0.0);
    }
}

TEST(LossGeo, EmptyNeighborhoodWarnsAndIsZero) {
    oracle::WarningCapture w;
    auto own = bundle(RefKind::geo, 0, {{1, 0}});
    EXPECT_EQ(loss_geo(own, {}), 0.0);
    EXPECT_EQ(w.messages.size(), 1u);
}

TEST(LossGeo, MisalignedBundlesThrow) {
    auto own = bundle(RefKind::geo, 0, {{1, 0}});
    std::vector<SoftDecisionBundle> fewer{bundle(RefKind::geo, 1, {})};
    EXPECT_THROW(loss_geo(own, fewer), DataError);
    auto other_region = bundle(RefKind::geo, 1, {{1, 0}});
    other_region.region = oracle::region(4);
    std::vector<SoftDecisionBundle> nb{other_region};
    EXPECT_THROW(loss_geo(own, nb), DataError);
    auto shifted = bundle(RefKind::geo, 1, {{1, 0}});
    shifted.per_sequence[0].support = {3, 9};
    std::vector<SoftDecisionBundle> nb2{shifted};
    EXPECT_THROW(loss_geo(own, nb2), DataError);
    std::vector<SoftDecisionBundle> sem{bundle(RefKind::semantic, 1, {{1, 0}})};
    EXPECT_THROW(loss_geo(own, sem), DataError);
    EXPECT_THROW(loss_cat(own, sem), DataError);
}

TEST(LossCat, SingleCategoryIsZero) {
    auto w = oracle::grid_world(3, 1, 1);
    SemReferenceSet refs{{oracle::cats({0, 0}), oracle::cats({0})}};
    auto a = model_for(w, 4, 1, 0), b = model_for(w, 8, 2, 1);
    auto own = compute_bundle(a, refs, 0);
    std::vector<SoftDecisionBundle> nb{compute_bundle(b, refs, 0)};
    for (const auto& d : own.per_sequence) EXPECT_DOUBLE_EQ(d.probs[0], 1.0);
    EXPECT_EQ(loss_cat(own, nb), 0.0);
}

TEST(LossCat, HandSetTwoCategories) {
    // ||(0.7,0.3)-(0.4,0.6)||^2 = 0.18, ||(0.2,0.8)-(0.5,0.5)||^2 = 0.18,
    // second neighbor: 0.02 + 0.08; mean over two neighbors
    auto own = bundle(RefKind::semantic, 0, {{0.7, 0.3}, {0.2, 0.8}});
    std::vector<SoftDecisionBundle> nb{bundle(RefKind::semantic, 1, {{0.4, 0.6}, {0.5, 0.5}}),
                                       bundle(RefKind::semantic, 2, {{0.8, 0.2}, {0.4, 0.6}})};
    EXPECT_NEAR(loss_cat(own, nb), (0.36 + 0.10) / 2, 1e-12);
}

TEST(LossMi, ZeroBilinearGivesLogOfNegatives) {
    for (std::size_t nc : {2u, 3u, 7u}) {
        auto w = oracle::grid_world(nc * 2, 1, nc);
        auto m = model_for(w, 4);
        for (auto& x : m.mi_block()) x = 0;
        std::vector<PoiId> pois;
        std::vector<CategoryId> cats;
        for (std::size_t i = 0; i < nc * 2; ++i) {
            pois.push_back(oracle::poi(i));
            cats.push_back(oracle::cat(i % nc));
        }
        EXPECT_NEAR(loss_mi(m, pois, cats), static_cast<double>(pois.size()) * std::log(nc - 1.0), 1e-12);
    }
}

TEST(LossMi, TwoCategoriesIsScoreDifference) {
    auto w = oracle::grid_world(4, 1, 2);
    auto m = model_for(w, 2);
    set_row(m.poi_row(1), {0.5, -1});
    set_row(m.cat_row(oracle::cat(0)), {1, 2});
    set_row(m.cat_row(oracle::cat(1)), {-1, 0.5});
    auto W = m.mi_block();
    W[0] = 0.3, W[1] = -0.2, W[2] = 0.7, W[3] = 1.1;
    // e_p W = (0.5*0.3 - 0.7, 0.5*-0.2 - 1.1) = (-0.55, -1.2)
    const double f0 = sigmoid(-0.55 * 1 + -1.2 * 2), f1 = sigmoid(-0.55 * -1 + -1.2 * 0.5);
    EXPECT_NEAR(bilinear(m, 1, oracle::cat(0)), -2.95, 1e-12);
    auto p = oracle::pois({1});
    auto c0 = oracle::cats({0}), c1 = oracle::cats({1});
    EXPECT_NEAR(loss_mi(m, p, c0), -(f0 - f1), 1e-12);
    EXPECT_NEAR(loss_mi(m, p, c1), -(f1 - f0), 1e-12);
}

TEST(LossMi, BoundedBySigmoidRange) {
    std::mt19937_64 rng(5);
    for (std::size_t nc : {2u, 3u, 6u}) {
        auto w = oracle::grid_world(12, 2, nc);
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            auto m = model_for(w, 4, seed);
            for (auto& x : m.mi_block()) x = std::normal_distribution<double>(0, 5)(rng);
            for (auto& x : m.poi_block()) x *= 10;
            for (std::size_t p = 0; p < 12; ++p) {
                auto pp = oracle::pois({static_cast<unsigned>(p)});
                auto cc = oracle::cats({static_cast<unsigned>(p % nc)});
                const double l = loss_mi(m, pp, cc);
                EXPECT_GE(l, std::log(nc - 1.0) - 1.0);
                EXPECT_LE(l, std::log(nc - 1.0) + 1.0);
            }
        }
    }
    auto w = oracle::grid_world(3, 1, 1);
    auto m = model_for(w, 2);
    EXPECT_THROW(loss_mi(m, oracle::pois({0}), oracle::cats({0})), ModelError);
}

TEST(LossMi, GradientMatchesFiniteDifferences) {
    auto w = oracle::grid_world(12, 2, 3);
    auto pois = oracle::pois({0, 3, 4, 7, 3});
    auto cats = oracle::cats({0, 0, 1, 1, 2});
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto m = model_for(w, 4, seed);
        // a non-trivial bilinear map so the sigmoid is not flat
        std::mt19937_64 rng(seed);
        for (auto& x : m.mi_block()) x = std::normal_distribution<double>(0, 1)(rng);
        LossTerms<double> terms;
        loss_mi_terms<double>(m, pois, cats, 1.0, &terms);
        auto g = backprop(m, terms);
        auto check = oracle::finite_difference_check(m, g, [&](const Model& mm) { return loss_mi(mm, pois, cats); });
        EXPECT_LT(check.max_rel, 1e-4) << check.worst;
    }
}

TEST(LossGeo, GradientMatchesFiniteDifferences) {
    Toy t;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto m = model_for(t.w, 4, seed);
        std::vector<SoftDecisionBundle> nb{compute_bundle(model_for(t.w, 8, seed + 100, 1), t.geo, t.w.regions, 0),
                                           compute_bundle(model_for(t.w, 2, seed + 200, 2), t.geo, t.w.regions, 0)};
        std::vector<SoftDecisionBundle> sem_nb{compute_bundle(model_for(t.w, 8, seed + 100, 1), t.sem, 0)};
        LossTerms<double> terms;
        loss_geo_terms<double>(m, t.geo, nb, 1.0, &terms);
        loss_cat_terms<double>(m, t.sem, sem_nb, 0.5, &terms);
        auto g = backprop(m, terms);
        auto check = oracle::finite_difference_check(m, g, [&](const Model& mm) {
            return loss_geo_terms<double>(mm, t.geo, nb, 1.0, nullptr) +
                   0.5 * loss_cat_terms<double>(mm, t.sem, sem_nb, 0.5, nullptr);
        });
        EXPECT_LT(check.max_rel, 1e-4) << check.worst;
    }
}

TEST(LossGeo, TermsAgreeWithBundleLoss) {
    Toy t;
    auto m = model_for(t.w, 4, 9);
    std::vector<SoftDecisionBundle> nb{compute_bundle(model_for(t.w, 16, 4, 1), t.geo, t.w.regions, 0)};
    EXPECT_NEAR(loss_geo_terms<double>(m, t.geo, nb, 1.0, nullptr), loss_geo(compute_bundle(m, t.geo, t.w.regions, 0), nb),
                1e-12);
    std::vector<SoftDecisionBundle> snb{compute_bundle(model_for(t.w, 16, 4, 1), t.sem, 0)};
    EXPECT_NEAR(loss_cat_terms<double>(m, t.sem, snb, 1.0, nullptr), loss_cat(compute_bundle(m, t.sem, 0), snb), 1e-12);
}

TEST(LossGeo, SmallStepDescends) {
    Toy t;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto m = model_for(t.w, 4, seed);
        std::vector<SoftDecisionBundle> nb{compute_bundle(model_for(t.w, 4, seed + 50, 1), t.geo, t.w.regions, 0)};
        LossTerms<double> terms;
        const double before = loss_geo_terms<double>(m, t.geo, nb, 1.0, &terms);
        auto g = backprop(m, terms);
        sgd_step(m, g, 1e-3);
        EXPECT_LT(loss_geo_terms<double>(m, t.geo, nb, 1.0, nullptr), before);
    }
}

TEST(Combined, AssemblyArithmetic) {
    auto b = assemble_loss(1.0, 0.2, 0.1, 0.3, 0.5, 0.7);
    EXPECT_NEAR(b.l_sem, 0.4, 1e-15);
    EXPECT_NEAR(b.combined, 1.13, 1e-12);
    EXPECT_DOUBLE_EQ(assemble_loss(1.0, 0.2, 0.1, 0.3, 0.5, 1.0).combined, 1.1);
    EXPECT_DOUBLE_EQ(assemble_loss(1.0, 0.2, 0.1, 0.3, 0.0, 0.7).combined, 1.0);
}

TEST(Combined, GatesAndValidation) {
    Toy t;
    auto m = model_for(t.w, 4, 3);
    auto seq = oracle::pois({0, 2, 4, 6, 8});
    std::vector<std::size_t> pos{1, 2, 3, 4};
    std::vector<SoftDecisionBundle> nb{compute_bundle(model_for(t.w, 4, 77, 1), t.geo, t.w.regions, 0)};
    std::vector<SoftDecisionBundle> snb{compute_bundle(model_for(t.w, 4, 77, 1), t.sem, 0)};
    auto mp = oracle::pois({0, 2, 4});
    auto mc = oracle::cats({0, 2, 1});
    CollabInputs in{&t.geo, &t.sem, nb, snb, mp, mc};
    const double l_loc = local_loss_terms<double>(m, seq, pos, Dropout::off(), 1.0, nullptr);

    auto off = combined_loss<double>(m, seq, pos, Dropout::off(), in, 0.0, 0.7, nullptr);
    EXPECT_EQ(off.combined, l_loc);
    EXPECT_EQ(off.l_geo, 0.0);

    auto geo_only = combined_loss<double>(m, seq, pos, Dropout::off(), in, 0.5, 1.0, nullptr);
    EXPECT_GT(geo_only.l_sem, 0.0);
    EXPECT_NEAR(geo_only.combined, l_loc + 0.5 * geo_only.l_geo, 1e-12);

    auto full = combined_loss<double>(m, seq, pos, Dropout::off(), in, 0.5, 0.7, nullptr);
    EXPECT_NEAR(full.l_sem, full.l_cat + full.l_mi, 1e-15);
    EXPECT_NEAR(full.combined, l_loc + 0.5 * (0.7 * full.l_geo + 0.3 * full.l_sem), 1e-12);

    EXPECT_THROW(combined_loss<double>(m, seq, pos, Dropout::off(), in, -0.1, 0.7, nullptr), ConfigError);
    EXPECT_THROW(combined_loss<double>(m, seq, pos, Dropout::off(), in, 0.5, 1.5, nullptr), ConfigError);
}

TEST(Combined, GradientMatchesFiniteDifferences) {
    Toy t;
    auto seq = oracle::pois({0, 2, 4, 6, 8, 10});
    std::vector<std::size_t> pos{1, 2, 3, 5};
    auto mp = oracle::pois({0, 2, 4, 6});
    auto mc = oracle::cats({0, 2, 1, 0});
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto m = model_for(t.w, 4, seed);
        std::mt19937_64 rng(seed);
        for (auto& x : m.mi_block()) x = std::normal_distribution<double>(0, 1)(rng);
        std::vector<SoftDecisionBundle> nb{compute_bundle(model_for(t.w, 8, seed + 1, 1), t.geo, t.w.regions, 0)};
        std::vector<SoftDecisionBundle> snb{compute_bundle(model_for(t.w, 8, seed + 1, 1), t.sem, 0),
                                            compute_bundle(model_for(t.w, 2, seed + 2, 2), t.sem, 0)};
        CollabInputs in{&t.geo, &t.sem, nb, snb, mp, mc};
        oracle::FixedDropout drop{seed, 0.2};
        LossTerms<double> terms;
        combined_loss<double>(m, seq, pos, drop.get(), in, 0.5, 0.7, &terms);
        auto g = backprop(m, terms);
        auto check = oracle::finite_difference_check(m, g, [&](const Model& mm) {
            return combined_loss<double>(mm, seq, pos, drop.get(), in, 0.5, 0.7, nullptr).combined;
        });
        EXPECT_LT(check.max_rel, 1e-4) << check.worst;
    }
}

TEST(SimilaritySample, PicksClosestBundles) {
    NeighborState st;
    st.geo_full = oracle::users({1, 2, 3});
    st.sem_full = oracle::users({4, 5});
    auto own_g = bundle(RefKind::geo, 0, {{0.6, 0.4}});
    auto own_s = bundle(RefKind::semantic, 0, {{0.5, 0.5}});
    std::map<UserId, SoftDecisionBundle> gb{{oracle::user(1), bundle(RefKind::geo, 1, {{0.1, 0.9}})},
                                            {oracle::user(2), bundle(RefKind::geo, 2, {{0.6, 0.4}})},
                                            {oracle::user(3), bundle(RefKind::geo, 3, {{0.5, 0.5}})}};
    std::map<UserId, SoftDecisionBundle> sb{{oracle::user(4), bundle(RefKind::semantic, 4, {{0.9, 0.1}})},
                                            {oracle::user(5), bundle(RefKind::semantic, 5, {{0.4, 0.6}})}};
    auto out = similarity_sample(st, own_g, own_s, gb, sb, 2);
    EXPECT_EQ(out.geo_active, oracle::users({2, 3}));
    EXPECT_EQ(out.sem_active, oracle::users({4, 5}));
    out = similarity_sample(st, own_g, own_s, gb, sb, 1);
    EXPECT_EQ(out.geo_active, oracle::users({2}));
    EXPECT_EQ(out.sem_active, oracle::users({5}));
}
