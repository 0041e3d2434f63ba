from fastapi import FastAPI
from routes import field_router, oracle_router, runs_router
from fastapi.middleware.cors import CORSMiddleware

from config.settings import configure_logging

configure_logging()

app = FastAPI(title="hjdc", description="Read-only access to Hamilton-Jacobi solver runs.")

app.add_middleware(
  CORSMiddleware,
  allow_origins=["*"],
  allow_credentials=True,
  allow_methods=["*"],
  allow_headers=["*"],
)

@app.get("/")
def read_root():
  return {"service": "hjdc", "routes": ["/runs", "/field", "/oracles"]}

app.include_router(runs_router.runs_router)
app.include_router(field_router.field_router)
app.include_router(oracle_router.oracle_router)
