#!/usr/bin/env python3
"""Build the bundled toy SQLite databases (campus.sqlite, shop.sqlite).

The data is fixed by hand: the campus database is seeded so that two
professors share the maximum popularity and exactly two of their advisees
have capability 5, which several gold queries in toy_corpus.jsonl rely on.
Run from the repo root:

    python3 fixtures/make_fixtures.py [--out-dir fixtures]
"""

from __future__ import annotations

import argparse
import sqlite3
from pathlib import Path

CAMPUS_SCHEMA = """
CREATE TABLE prof (
 prof_id INTEGER PRIMARY KEY, -- unique id for professors
 first_name TEXT, -- the first name of the professor
 last_name TEXT, -- the last name of the professor
 popularity INTEGER -- popularity of the professor
);
CREATE TABLE student (
 student_id INTEGER PRIMARY KEY, -- the unique id to identify students
 f_name TEXT, -- the first name of the student
 l_name TEXT, -- the last name of the student
 enrolled_year INTEGER, -- year the student enrolled
 gpa REAL -- grade point average
);
CREATE TABLE ra (
 student_id INTEGER, -- the id representing each student
 capability INTEGER, -- the research capability of the student
 prof_id INTEGER, -- professor who advises this student
 salary INTEGER -- monthly salary of the assistant
);
CREATE TABLE registration (
 student_id INTEGER, -- the id of students
 course_id INTEGER, -- the id of courses
 grade INTEGER -- grade obtained in the course
);
CREATE TABLE course (
 course_id INTEGER PRIMARY KEY, -- unique id for courses
 name TEXT, -- name of the course
 credit INTEGER, -- credit of the course
 diff INTEGER -- difficulty of the course
);
"""

CAMPUS_PROF = [
    (1, "Bernhard", "Conkay", 3),
    (2, "Hattie", "Cunningham", 3),
    (3, "Mateo", "Ewenson", 2),
    (4, "Ines", "Marsh", 1),
]
CAMPUS_STUDENT = [
    (101, "Ahmed", "Sukva", 2020, 3.8),
    (102, "Alvera", "Digby", 2021, 3.2),
    (103, "Amerigo", "Stayt", 2021, 3.9),
    (104, "Bora", "Kelm", 2020, 2.9),
    (105, "Carmen", "Ruiz", 2022, 3.6),
    (106, "Devi", "Anand", 2021, 3.1),
    (107, "Elias", "Norr", 2019, 2.7),
    (108, "Freya", "Lund", 2022, 3.95),
    (109, "Goran", "Ilic", 2020, 3.4),
    (110, "Hana", "Sato", 2021, 2.5),
]
# Professors 1 and 2 share the max popularity; among their advisees exactly
# students 101 and 103 have capability 5.
CAMPUS_RA = [
    (101, 5, 1, 1000),
    (102, 4, 1, 1200),
    (103, 5, 2, 900),
    (104, 2, 2, 1100),
    (105, 5, 3, 800),
    (106, 3, 3, 950),
    (107, 4, 4, 1000),
]
CAMPUS_COURSE = [
    (1, "Databases", 3, 4),
    (2, "Algorithms", 4, 5),
    (3, "Statistics", 3, 3),
    (4, "Compilers", 4, 5),
    (5, "Ethics", 2, 2),
]
CAMPUS_REGISTRATION = [
    (101, 1, 88),
    (101, 2, 91),
    (102, 1, 75),
    (103, 2, 95),
    (103, 3, 84),
    (104, 3, 62),
    (105, 1, 79),
    (105, 5, 97),
    (106, 4, 70),
    (107, 4, 58),
    (108, 2, 99),
    (108, 5, 93),
    (109, 1, 81),
    (110, 3, 66),
]

SHOP_SCHEMA = """
CREATE TABLE customers (
 customer_id INTEGER PRIMARY KEY, -- unique id for customers
 name TEXT, -- customer full name
 city TEXT, -- city of residence
 signup_year INTEGER -- year the account was created
);
CREATE TABLE orders (
 order_id INTEGER PRIMARY KEY, -- unique id for orders
 customer_id INTEGER, -- customer who placed the order
 status TEXT, -- order status
 placed_on TEXT, -- ISO date the order was placed
 total REAL -- order total amount
);
CREATE TABLE order_items (
 item_id INTEGER PRIMARY KEY, -- unique id for order lines
 order_id INTEGER, -- order this line belongs to
 product TEXT, -- product name
 qty INTEGER, -- quantity ordered
 unit_price REAL -- unit price
);
"""

SHOP_CUSTOMERS = [
    (1, "Alice Jones", "Lisbon", 2019),
    (2, "Bruno Costa", "Porto", 2020),
    (3, "Carla Reis", "Lisbon", 2021),
    (4, "Daniel Mota", "Faro", 2018),
    (5, "Eva Lopes", "Porto", 2022),
    (6, "Filipe Sousa", "Braga", 2020),
    (7, "Grace Hall", "Lisbon", 2019),
    (8, "Hugo Neves", "Faro", 2023),
]
SHOP_ORDERS = [
    (1, 1, "shipped", "2024-01-05", 120.50),
    (2, 1, "delivered", "2024-02-11", 35.00),
    (3, 2, "pending", "2024-02-14", 89.90),
    (4, 3, "shipped", "2024-03-01", 210.00),
    (5, 3, "cancelled", "2024-03-04", 15.25),
    (6, 4, "shipped", "2024-03-18", 44.10),
    (7, 5, "delivered", "2024-04-02", 310.75),
    (8, 5, "shipped", "2024-04-20", 58.80),
    (9, 6, "pending", "2024-05-06", 22.40),
    (10, 7, "shipped", "2024-05-19", 132.60),
    (11, 7, "delivered", "2024-06-07", 76.30),
    (12, 8, "pending", "2024-06-21", 190.45),
    (13, 2, "delivered", "2024-07-02", 49.99),
    (14, 4, "shipped", "2024-07-15", 66.00),
]
SHOP_ITEMS = [
    (1, 1, "espresso machine", 1, 95.00),
    (2, 1, "coffee beans", 3, 8.50),
    (3, 2, "mug", 2, 6.00),
    (4, 2, "tea sampler", 1, 23.00),
    (5, 3, "grinder", 1, 79.90),
    (6, 3, "filters", 2, 5.00),
    (7, 4, "espresso machine", 2, 95.00),
    (8, 4, "descaler", 1, 20.00),
    (9, 5, "mug", 1, 15.25),
    (10, 6, "coffee beans", 4, 8.50),
    (11, 6, "filters", 2, 5.05),
    (12, 7, "barista kit", 1, 250.00),
    (13, 7, "coffee beans", 5, 8.50),
    (14, 7, "mug", 3, 6.10),
    (15, 8, "tea sampler", 2, 23.00),
    (16, 8, "filters", 1, 12.80),
    (17, 9, "mug", 2, 6.00),
    (18, 9, "spoon set", 1, 10.40),
    (19, 10, "grinder", 1, 79.90),
    (20, 10, "coffee beans", 6, 8.50),
    (21, 11, "tea sampler", 3, 23.00),
    (22, 11, "mug", 1, 7.30),
    (23, 12, "barista kit", 1, 159.00),
    (24, 12, "descaler", 1, 31.45),
    (25, 14, "espresso machine", 1, 66.00),
]


def _build(path: Path, schema: str, tables: dict[str, list[tuple]]) -> None:
    if path.exists():
        path.unlink()
    conn = sqlite3.connect(path)
    try:
        conn.executescript(schema)
        for table, rows in tables.items():
            placeholders = ", ".join("?" for _ in rows[0])
            conn.executemany(f"INSERT INTO {table} VALUES ({placeholders})", rows)
        conn.commit()
    finally:
        conn.close()


def build_campus(path: Path) -> None:
    _build(
        path,
        CAMPUS_SCHEMA,
        {
            "prof": CAMPUS_PROF,
            "student": CAMPUS_STUDENT,
            "ra": CAMPUS_RA,
            "registration": CAMPUS_REGISTRATION,
            "course": CAMPUS_COURSE,
        },
    )


def build_shop(path: Path) -> None:
    _build(
        path,
        SHOP_SCHEMA,
        {
            "customers": SHOP_CUSTOMERS,
            "orders": SHOP_ORDERS,
            "order_items": SHOP_ITEMS,
        },
    )


def build_all(out_dir: Path) -> tuple[Path, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    campus = out_dir / "campus.sqlite"
    shop = out_dir / "shop.sqlite"
    build_campus(campus)
    build_shop(shop)
    return campus, shop


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", type=Path, default=Path(__file__).parent)
    args = parser.parse_args()
    campus, shop = build_all(args.out_dir)
    print(f"built {campus}")
    print(f"built {shop}")


if __name__ == "__main__":
    main()
