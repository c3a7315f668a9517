import math

from unittest.mock import patch

from qperc.workers import parallel_map


# === Test: parallel_map ===

def test_serial_path_keeps_order():
    """jobs = 1 is a plain ordered map."""
    assert parallel_map(math.sqrt, [9, 4, 1], jobs=1) == [3.0, 2.0, 1.0]


def test_single_item_stays_in_process():
    """One task never starts a pool."""
    with patch("qperc.workers.ProcessPoolExecutor") as pool:
        assert parallel_map(abs, [-2], jobs=8) == [2]
    pool.assert_not_called()


def test_process_pool_results_follow_input_order():
    """Results come back in input order across workers."""
    items = list(range(40, 0, -1))
    assert parallel_map(math.factorial, items, jobs=3) == [math.factorial(i) for i in items]


def test_worker_count_is_capped_by_tasks():
    """No more workers than tasks."""
    with patch("qperc.workers.ProcessPoolExecutor") as pool:
        pool.return_value.__enter__.return_value.map.side_effect = lambda fn, items: map(fn, items)
        assert parallel_map(abs, [-1, -2], jobs=16) == [1, 2]
    pool.assert_called_once_with(max_workers=2)
