from __future__ import annotations

import numpy as np
import pytest

from embedchoice.data import (
    ChoiceObservation,
    Dataset,
    EmbeddingMatrix,
    Product,
    Source,
    attach_attributes_as_embedding,
    load_choices,
    load_dataset,
    load_embeddings,
    load_products,
    write_choices,
    write_dataset,
    write_embeddings,
)
from embedchoice.errors import ParseError, ValidationError

HEADER = "individual_id,task,product_id,offered,price,rank,chosen\n"


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_one_individual_ten_books(tmp_path):
    rows = "".join(f"u1,1,B{j},1,{3 + j % 5},{j},{int(j == 3)}\n" for j in range(1, 11))
    obs = load_choices(write(tmp_path, "c.csv", HEADER + rows))
    assert len(obs) == 1
    assert len(obs[0].offered) == 10 and obs[0].chosen == "B3"
    assert obs[0].rank == tuple(range(1, 11))


def test_blank_rank_column(tmp_path):
    obs = load_choices(write(tmp_path, "c.csv", HEADER + "u,1,A,1,2.5,,1\nu,1,B,1,3,,0\n"))
    assert obs[0].rank is None


def test_parse_error_carries_line_number(tmp_path):
    p = write(tmp_path, "c.csv", HEADER + "u,1,A,1,2.5,1,1\nu,1,B,1,abc,2,0\n")
    with pytest.raises(ParseError) as exc:
        load_choices(p)
    assert exc.value.line == 3
    assert ":3:" in str(exc.value)


def test_chosen_not_offered_names_individual(tmp_path):
    p = write(tmp_path, "c.csv", HEADER + "alice,1,A,1,2.5,,0\nalice,1,B,1,3,,0\n")
    with pytest.raises(ValidationError, match="alice"):
        load_choices(p)


def test_second_task_must_drop_first_choice(tmp_path):
    text = HEADER + "u,1,A,1,1,,1\nu,1,B,1,1,,0\nu,1,C,1,1,,0\nu,2,A,1,1,,1\nu,2,C,1,1,,0\n"
    with pytest.raises(ValidationError, match="task-2"):
        load_choices(write(tmp_path, "c.csv", text))


def test_experiment_scale_choice_count(tmp_path):
    rng = np.random.default_rng(0)
    obs = []
    ids = tuple(f"B{j}" for j in range(10))
    for i in range(9265):
        obs.append(ChoiceObservation(f"u{i}", 1, ids, tuple(rng.integers(3, 8, 10)), ids[rng.integers(10)], tuple(rng.permutation(10) + 1)))
    write_choices(tmp_path / "c.csv", obs)
    back = load_choices(tmp_path / "c.csv")
    assert len(back) == 9265
    assert back == obs


def test_observation_invariants():
    with pytest.raises(ValidationError):
        ChoiceObservation("u", 1, ("A", "B"), (1.0, 2.0), "A", (1, 1))
    with pytest.raises(ValidationError):
        ChoiceObservation("u", 3, ("A",), (1.0,), "A")
    with pytest.raises(ValidationError):
        ChoiceObservation("u", 1, ("A",), (float("inf"),), "A")


def test_embeddings_row_alignment_and_shape(tmp_path):
    rng = np.random.default_rng(1)
    ids = [f"P{j}" for j in range(10)]
    vals = rng.standard_normal((10, 512))
    order = rng.permutation(10)
    emb = EmbeddingMatrix(Source("image", "vgg19"), tuple(ids[k] for k in order), vals[order])
    write_embeddings(tmp_path / "e.csv", emb)
    loaded = load_embeddings(tmp_path / "e.csv", "image/vgg19", catalog=ids)
    assert loaded.values.shape == (10, 512)
    assert loaded.rows == tuple(ids)
    np.testing.assert_array_equal(loaded.values, vals)


def test_embeddings_duplicate_and_missing(tmp_path):
    p = write(tmp_path, "e.csv", "product_id,e1\nA,1\nA,2\n")
    with pytest.raises(ParseError):
        load_embeddings(p, "title/bow")
    p = write(tmp_path, "e2.csv", "product_id,e1\nA,1\nB,2\n")
    with pytest.raises(ValidationError, match="C"):
        load_embeddings(p, "title/bow", catalog=["A", "B", "C"])
    p = write(tmp_path, "e3.csv", "product_id,e1,e2\nA,1,nan\n")
    with pytest.raises(ParseError, match="e2"):
        load_embeddings(p, "title/bow")


def test_attributes_columns_sorted():
    cat = [Product("a", attributes={"year": 2000.0, "pages": 300.0}), Product("b", attributes={"year": 2010.0, "pages": 150.0}), Product("c", attributes={"year": 1990.0, "pages": 500.0})]
    emb = attach_attributes_as_embedding(cat)
    assert emb.columns == ("pages", "year")
    assert emb.values.shape == (3, 2)
    assert emb.source == Source("attributes", "raw")
    with pytest.raises(ValidationError, match="year"):
        attach_attributes_as_embedding([cat[0], Product("d", attributes={"pages": 1.0})])


def test_tablet_scale_attribute_matrix(tmp_path):
    rng = np.random.default_rng(2)
    names = [f"a{k:02d}" for k in range(18)]
    header = "product_id,label,title,description," + ",".join("attr:" + n for n in names) + "\n"
    rows = "".join(f"T{j},Tablet {j},,," + ",".join(str(x) for x in rng.normal(size=18)) + "\n" for j in range(15))
    catalog = load_products(write(tmp_path, "p.csv", header + rows))
    emb = attach_attributes_as_embedding(catalog)
    assert emb.values.shape == (15, 18)
    assert emb.source.descriptor == "attributes/raw"


def test_categorical_attributes_one_hot(tmp_path):
    text = "product_id,label,title,description,attr:genre,attr:pages\nA,a,,,mystery,100\nB,b,,,fantasy,200\n"
    cat = load_products(write(tmp_path, "p.csv", text))
    assert cat[0].attributes == {"genre=fantasy": 0.0, "genre=mystery": 1.0, "pages": 100.0}


def test_dataset_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    ids = ("A", "B", "C")
    catalog = [Product(p, f"label, {p}", {"x": float(k)}, f"title {p}", 'desc "quoted"', (f"r1 {p}", "r2\nmultiline")) for k, p in enumerate(ids)]
    obs = [ChoiceObservation("u1", 1, ids, (3.0, 4.5, 0.1), "B", (2, 1, 3)), ChoiceObservation("u1", 2, ("A", "C"), (3.0, 0.1), "C", (1, 2))]
    embs = [EmbeddingMatrix(Source("reviews", "use"), ids, rng.standard_normal((3, 4)))]
    ds = Dataset(catalog, obs, embs)
    write_dataset(tmp_path / "d", ds)
    back = load_dataset(tmp_path / "d")
    assert back.catalog == ds.catalog
    assert back.observations == ds.observations
    assert back.embeddings[0] == ds.embeddings[0]


def test_dataset_rejects_unknown_product():
    with pytest.raises(ValidationError):
        Dataset([Product("A")], [ChoiceObservation("u", 1, ("A", "Z"), (1.0, 1.0), "A")])
