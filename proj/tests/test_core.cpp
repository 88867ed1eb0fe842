#include <catch2/catch_amalgamated.hpp>

#include "remat/types.hpp"
#include "test_helpers.hpp"

using namespace remat;

TEST_CASE("well-formed toy block validates clean") {
    CDGraph g = testing::toy_block();
    CHECK(validate_cdgraph(g).empty());
}

TEST_CASE("loss with nonzero time is flagged") {
    CDGraph g = testing::toy_block();
    g.cnodes[g.loss_index].time = 5;
    auto v = validate_cdgraph(g);
    REQUIRE_FALSE(v.empty());
    bool named = false;
    for (auto& x : v) named = named || x.rule == "loss-time";
    CHECK(named);
}

TEST_CASE("cyclic wiring is flagged as a topology violation") {
    // f1 -> d1 -> f2 -> d2 -> f1: make f1 depend on d2
    CDGraph g = testing::toy_block();
    int d2 = g.dnode_index("d2");
    g.cnodes[g.cnode_index("f1")].deps.push_back(d2);
    auto v = validate_cdgraph(g);
    REQUIRE_FALSE(v.empty());
    bool named = false;
    for (auto& x : v) named = named || x.rule == "topo-order";
    CHECK(named);
}

TEST_CASE("phantom degree violations are flagged") {
    CDGraph g = testing::toy_block();
    g.dnodes[g.dnode_index("d1")].kind = DNodeKind::Phantom;  // d1 has two consumers
    auto v = validate_cdgraph(g);
    bool named = false;
    for (auto& x : v) named = named || x.rule == "phantom-degree";
    CHECK(named);
}

TEST_CASE("edge sets unroll the graph edges") {
    CDGraph g = testing::toy_block();
    EdgeSets es = derive_edge_sets(g);
    int f1 = g.cnode_index("f1"), f2 = g.cnode_index("f2");
    int d1 = g.dnode_index("d1");
    CHECK(std::count(es.children_of_comp.begin(), es.children_of_comp.end(),
                     std::make_pair(f1, d1)) == 1);
    REQUIRE(es.parents_of_data[d1].size() == 1);
    CHECK(es.parents_of_data[d1][0] == f1);
    // d1 feeds f2 and b2
    CHECK(es.children_of_data[d1].size() == 2);
    CHECK(es.children_of_data[d1][0] == f2);
    // |ChildrenOfComp| counts every compute->data edge
    size_t expect = 0;
    for (const CNode& c : g.cnodes) expect += c.outputs.size();
    CHECK(es.children_of_comp.size() == expect);
}

TEST_CASE("multi-parent grads list both contributors") {
    CDGraph g = testing::toy_block();
    // add a second contribution into g1 from a new backward
    int g1 = g.dnode_index("g1");
    CNode extra;
    extra.id = "b2x";
    extra.kind = CNodeKind::Backward;
    extra.time = 1;
    extra.deps = {g.dnode_index("g2")};
    extra.outputs = {g1};
    g.cnodes.insert(g.cnodes.begin() + 4, extra);
    g.dnodes[g1].parents = {3, 4};
    EdgeSets es = derive_edge_sets(g);
    CHECK(es.parents_of_data[g1].size() == 2);
}

TEST_CASE("edge sets are pure") {
    CDGraph g = testing::toy_block();
    EdgeSets a = derive_edge_sets(g);
    EdgeSets b = derive_edge_sets(g);
    CHECK(a.children_of_comp == b.children_of_comp);
    CHECK(a.parents_of_data == b.parents_of_data);
    CHECK(a.children_of_data == b.children_of_data);
}

TEST_CASE("empty graph yields empty edge sets") {
    CDGraph g;
    EdgeSets es = derive_edge_sets(g);
    CHECK(es.children_of_comp.empty());
    CHECK(es.parents_of_data.empty());
    CHECK(es.children_of_data.empty());
}

TEST_CASE("chain seam sizes are validated") {
    Chain chain;
    chain.blocks.push_back(testing::toy_block(8));
    chain.blocks.push_back(testing::toy_block(4));
    chain.equiv_class = {0, 1};
    auto v = validate_chain(chain);
    bool named = false;
    for (auto& x : v) named = named || x.rule == "seam-size";
    CHECK(named);
}

TEST_CASE("random blocks validate clean") {
    std::mt19937 rng(7);
    for (int i = 0; i < 200; ++i) {
        testing::BlockGenConfig cfg;
        cfg.max_forwards = 3;
        CDGraph g = testing::random_block(rng, cfg);
        INFO("iteration " << i);
        REQUIRE(validate_cdgraph(g).empty());
    }
    for (int i = 0; i < 50; ++i) {
        Chain c = testing::random_chain(rng, 4, 2);
        INFO("chain " << i);
        REQUIRE(validate_chain(c).empty());
    }
}
