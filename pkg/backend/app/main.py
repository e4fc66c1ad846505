import logging

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from app.routes import tracking

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

app = FastAPI(
    title="AutoTrack API",
    description="Correlation filter tracking sessions with automatic spatio-temporal regularization",
    version="1.0.0"
)

# CORS middleware for browser clients
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Include routes
app.include_router(tracking.router, prefix="/api", tags=["tracking"])

@app.get("/")
def root():
    return {"message": "AutoTrack API", "status": "running"}

@app.get("/health")
def health():
    return {"status": "healthy"}
