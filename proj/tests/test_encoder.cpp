#include <gtest/gtest.h>

#include "fieldnode/encoder.hpp"
#include "support.hpp"

using namespace fieldnode;
using fieldnode::testing::gradient_rel_error;
using fieldnode::testing::random_input;
using fieldnode::testing::random_projection;

namespace {

PartitionPlan pendulum_fields() {
  return build_partition(make_spec("pendulum", "balance").field_schema, PartitionStrategy::field_wise);
}

}  // namespace

TEST(Encoder, OutputShapeIsNodesByDNode) {
  nn::ParameterStore<double> store;
  nn::Rng rng(0);
  FieldNodeEncoder<double> enc(store, pendulum_fields(), 8, 16, 2, rng);
  ad::Graph<double> g;
  auto E = enc(g, g.constant(ad::Matrix<double>::Random(1, 3)));
  EXPECT_EQ(E.rows(), 2);
  EXPECT_EQ(E.cols(), 8);
  auto EB = enc(g, g.constant(ad::Matrix<double>::Random(5, 3)));
  EXPECT_EQ(EB.rows(), 10);
  EXPECT_THROW(enc(g, g.constant(ad::Matrix<double>::Random(1, 4))), ShapeError);
}

TEST(Encoder, PerturbingOneSliceChangesOnlyItsRow) {
  nn::ParameterStore<double> store;
  nn::Rng rng(1);
  auto plan = build_partition(make_spec("chain", "hold").field_schema, PartitionStrategy::chunk_wise, 4);
  FieldNodeEncoder<double> enc(store, plan, 4, 8, 2, rng);
  ad::Matrix<double> x = ad::Matrix<double>::Random(1, 6);
  for (int j = 0; j < plan.node_count(); ++j) {
    ad::Matrix<double> y = x;
    for (int idx : plan.nodes[static_cast<std::size_t>(j)].indices) y(0, idx) += 0.37;
    ad::Graph<double> g;
    auto a = enc(g, g.constant(x)).value();
    auto b = enc(g, g.constant(y)).value();
    for (int i = 0; i < plan.node_count(); ++i) {
      const double change = (a.row(i) - b.row(i)).norm();
      if (i == j)
        EXPECT_GT(change, 0.0);
      else
        EXPECT_EQ(change, 0.0) << "node " << i << " moved when slice " << j << " changed";
    }
  }
}

TEST(Encoder, ZeroOutputLayerGivesZeroEmbeddings) {
  nn::ParameterStore<double> store;
  nn::Rng rng(2);
  FieldNodeEncoder<double> enc(store, pendulum_fields(), 8, 16, 2, rng);
  for (int i = 0; i < enc.node_count(); ++i) enc.net(i).zero_output();
  ad::Graph<double> g;
  EXPECT_TRUE(enc(g, g.constant(ad::Matrix<double>::Random(3, 3))).value().isZero());
}

TEST(Encoder, NodesDoNotShareParameters) {
  nn::ParameterStore<double> store;
  nn::Rng rng(3);
  FieldNodeEncoder<double> enc(store, pendulum_fields(), 4, 8, 2, rng);
  EXPECT_EQ(store.group("encoder/node0/").size(), store.group("encoder/node1/").size());
  EXPECT_FALSE(store.group("encoder/node0/").empty());
}

TEST(Encoder, GradientsMatchFiniteDifferences) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    nn::ParameterStore<double> store;
    nn::Rng rng(s);
    auto plan = build_partition(make_spec("chain", "hold").field_schema, PartitionStrategy::chunk_wise, 4);
    FieldNodeEncoder<double> enc(store, plan, 3, 5, 2, rng);
    auto& x = random_input(store, "input", 2, 6, rng);
    const double err = gradient_rel_error(store.group(), [&](ad::Graph<double>& g) {
      return random_projection(g, enc(g, g.parameter(x)), s);
    });
    EXPECT_LE(err, 1e-4) << "seed " << s;
  }
}
