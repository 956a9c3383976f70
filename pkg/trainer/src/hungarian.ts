/**
 * Minimum-cost bipartite assignment (Hungarian algorithm), potential-based
 * O(n^2 * m) shortest-augmenting-path formulation. Assigns every row when
 * rows <= cols; call sites transpose otherwise.
 */

export interface Assignment {
  /** pairs[r] is the column assigned to row r */
  pairs: number[];
  totalCost: number;
}

function solveRowsLeqCols(cost: number[][]): number[] {
  const n = cost.length;
  const m = cost[0].length;
  // 1-based potentials over rows (u) and columns (v); p[j] = row matched to j
  const u = new Array<number>(n + 1).fill(0);
  const v = new Array<number>(m + 1).fill(0);
  const p = new Array<number>(m + 1).fill(0);
  const way = new Array<number>(m + 1).fill(0);

  for (let i = 1; i <= n; i++) {
    p[0] = i;
    let j0 = 0;
    const minv = new Array<number>(m + 1).fill(Infinity);
    const used = new Array<boolean>(m + 1).fill(false);
    do {
      used[j0] = true;
      const i0 = p[j0];
      let delta = Infinity;
      let j1 = 0;
      for (let j = 1; j <= m; j++) {
        if (used[j]) continue;
        const cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (let j = 0; j <= m; j++) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] !== 0);
    do {
      const j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 !== 0);
  }

  const rowToCol = new Array<number>(n).fill(-1);
  for (let j = 1; j <= m; j++) {
    if (p[j] > 0) rowToCol[p[j] - 1] = j - 1;
  }
  return rowToCol;
}

/** Solve for an arbitrary rectangular matrix; assigns min(rows, cols) pairs. */
export function hungarian(cost: number[][]): Assignment {
  if (cost.length === 0 || cost[0].length === 0) {
    return { pairs: [], totalCost: 0 };
  }
  const n = cost.length;
  const m = cost[0].length;
  let rowToCol: number[];
  if (n <= m) {
    rowToCol = solveRowsLeqCols(cost);
  } else {
    const transposed = Array.from({ length: m }, (_, j) =>
      Array.from({ length: n }, (_, i) => cost[i][j]),
    );
    const colToRow = solveRowsLeqCols(transposed);
    rowToCol = new Array<number>(n).fill(-1);
    colToRow.forEach((row, col) => {
      rowToCol[row] = col;
    });
  }
  let totalCost = 0;
  rowToCol.forEach((col, row) => {
    if (col >= 0) totalCost += cost[row][col];
  });
  return { pairs: rowToCol, totalCost };
}
